//! Cross-validation folds, metrics, and per-regime evaluation.
//!
//! Five regimes are supported: one-model-per-dataset crossed with
//! {same-distribution, unseen-hyperparameters}, and single-model crossed
//! with {same-distribution, unseen-hyperparameters, unseen-datasets}.
//! Same-distribution folds are keyed by dataset seed; the other regimes
//! partition hyperparameter ids or dataset-variation ids into five
//! contiguous groups so no id ever crosses the train/test boundary.
//!
//! Metrics are always computed on the pooled prediction/label arrays
//! concatenated over every group and fold, never by averaging per-fold
//! scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggp::{self, Family, GgpExample, GgpModel, TaskMode};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SameDist,
    UnseenHparams,
    UnseenDatasets,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::SameDist => write!(f, "same_dist"),
            Regime::UnseenHparams => write!(f, "unseen_hparams"),
            Regime::UnseenDatasets => write!(f, "unseen_datasets"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    PerDataset,
    SingleModel,
}

impl Scope {
    pub fn task_mode(self) -> TaskMode {
        match self {
            Scope::PerDataset => TaskMode::DatasetDependent,
            Scope::SingleModel => TaskMode::DatasetIndependent,
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::PerDataset => write!(f, "per_dataset"),
            Scope::SingleModel => write!(f, "single_model"),
        }
    }
}

/// Which quantity the predictor regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Gap,
    TestAccuracy,
}

impl std::fmt::Display for LabelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelMode::Gap => write!(f, "gap"),
            LabelMode::TestAccuracy => write!(f, "test_acc"),
        }
    }
}

/// Coefficient of determination:
/// `1 - sum_i (pred_i - label_i)^2 / sum_i (label_i - mean(labels))^2`.
pub fn r_squared(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::domain(format!(
            "length mismatch: {} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.len() < 2 {
        return Err(Error::domain("R^2 needs at least two points".to_string()));
    }
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let ss_tot: f64 = labels.iter().map(|l| (l - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::domain(
            "labels are all identical; R^2 is undefined".to_string(),
        ));
    }
    let ss_res: f64 = predictions.iter().zip(labels).map(|(p, l)| (p - l).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean absolute difference.
pub fn l1_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::domain("L1 loss needs equal, nonzero lengths".to_string()));
    }
    Ok(predictions.iter().zip(labels).map(|(p, l)| (p - l).abs()).sum::<f64>()
        / predictions.len() as f64)
}

/// Disjoint test folds of net ids plus a human-readable key per fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub regime: Regime,
    pub scope: Scope,
    pub folds: Vec<Vec<u64>>,
    pub fold_keys: Vec<String>,
}

/// Splits sorted ids into `k` contiguous groups as evenly as possible;
/// the remainder goes to the trailing groups (27 ids -> 5,5,5,6,6).
fn balanced_partition<T: Copy>(ids: &[T], k: usize) -> Vec<Vec<T>> {
    let n = ids.len();
    let base = n / k;
    let rem = n % k;
    let mut out = Vec::with_capacity(k);
    let mut at = 0;
    for g in 0..k {
        let take = base + usize::from(g >= k - rem);
        out.push(ids[at..at + take].to_vec());
        at += take;
    }
    out
}

fn sorted_unique<T: Ord + Copy>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut v: Vec<T> = values.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Builds the fold plan for one example population.
///
/// Same-distribution: one fold per distinct data seed. Unseen
/// hyperparameters: hyperparameter ids partitioned into 5 groups. Unseen
/// datasets (single-model only): variation ids partitioned into 5 groups.
pub fn make_folds(examples: &[GgpExample], regime: Regime, scope: Scope) -> Result<FoldPlan> {
    if examples.is_empty() {
        return Err(Error::domain("cannot build folds over zero examples".to_string()));
    }
    let (folds, fold_keys) = match regime {
        Regime::SameDist => {
            let seeds = sorted_unique(examples.iter().map(|e| e.data_seed));
            let folds = seeds
                .iter()
                .map(|&s| {
                    examples.iter().filter(|e| e.data_seed == s).map(|e| e.net_id).collect()
                })
                .collect();
            (folds, seeds.iter().map(|s| format!("seed={s}")).collect())
        }
        Regime::UnseenHparams => {
            let ids = sorted_unique(examples.iter().map(|e| e.hparam_id));
            let groups = balanced_partition(&ids, 5);
            let folds = groups
                .iter()
                .map(|g| {
                    examples
                        .iter()
                        .filter(|e| g.contains(&e.hparam_id))
                        .map(|e| e.net_id)
                        .collect()
                })
                .collect();
            let keys = groups.iter().map(|g| format!("hparams{:?}", g)).collect();
            (folds, keys)
        }
        Regime::UnseenDatasets => {
            if scope == Scope::PerDataset {
                return Err(Error::config(
                    "unseen_datasets folds require single_model scope".to_string(),
                ));
            }
            let ids = sorted_unique(examples.iter().map(|e| e.variation_id));
            let groups = balanced_partition(&ids, 5);
            let folds = groups
                .iter()
                .map(|g| {
                    examples
                        .iter()
                        .filter(|e| g.contains(&e.variation_id))
                        .map(|e| e.net_id)
                        .collect()
                })
                .collect();
            let keys = groups.iter().map(|g| format!("variations{:?}", g)).collect();
            (folds, keys)
        }
    };
    Ok(FoldPlan { regime, scope, folds, fold_keys })
}

impl FoldPlan {
    /// Verifies disjointness and coverage against the example population.
    pub fn check_partition(&self, examples: &[GgpExample]) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for fold in &self.folds {
            for id in fold {
                if !seen.insert(*id) {
                    return Err(Error::Eval(format!("net {id} appears in two folds")));
                }
            }
        }
        for e in examples {
            if !seen.contains(&e.net_id) {
                return Err(Error::Eval(format!("net {} missing from the fold plan", e.net_id)));
            }
        }
        if seen.len() != examples.len() {
            return Err(Error::Eval("fold plan covers ids outside the population".to_string()));
        }
        Ok(())
    }
}

/// One prediction/label pair from a test fold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CalPoint {
    pub net_id: u64,
    pub prediction: f64,
    pub label: f64,
    pub fold: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub key: String,
    pub n: usize,
    pub r2: Option<f64>,
    pub l1: Option<f64>,
}

/// One cell of the results table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub scope: Scope,
    pub regime: Regime,
    pub family: Family,
    pub label_mode: LabelMode,
    pub lambda: f64,
    /// Pooled coefficient of determination over every test-fold prediction.
    pub r2: f64,
    /// Pooled mean L1 loss.
    pub l1: f64,
    pub n: usize,
    pub groups: usize,
    pub per_fold: Vec<FoldMetrics>,
    /// Group/fold combinations skipped for lack of data.
    pub skipped: Vec<String>,
    pub rank_deficient_fits: usize,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub calibration: Vec<CalPoint>,
}

fn min_train_examples(family: Family) -> usize {
    match family {
        Family::Linear => 6,
        Family::Dnn | Family::Rnn => 1,
    }
}

/// Runs the full cross-validation for one (scope, regime, family) cell.
///
/// Per-dataset scope trains one predictor per (variation, fold); single-model
/// scope trains one predictor per fold over everything. All test-fold
/// predictions are pooled before computing the headline metrics.
pub fn evaluate_regime(
    examples: &[GgpExample],
    regime: Regime,
    scope: Scope,
    family: Family,
    label_mode: LabelMode,
    eval_seed: u64,
) -> Result<EvalOutcome> {
    if examples.is_empty() {
        return Err(Error::domain("no examples to evaluate".to_string()));
    }
    let lambda = examples[0].signature.lambda;
    for e in examples {
        ggp::check_lambda(lambda, e.signature.lambda)?;
    }
    let mode = scope.task_mode();

    // Fold keys are derived over the whole population so fold indices align
    // across variation groups.
    let global_plan = make_folds(examples, regime, scope)?;
    let n_folds = global_plan.folds.len();

    let groups: Vec<Vec<&GgpExample>> = match scope {
        Scope::SingleModel => vec![examples.iter().collect()],
        Scope::PerDataset => {
            let ids = sorted_unique(examples.iter().map(|e| e.variation_id));
            ids.iter()
                .map(|&v| examples.iter().filter(|e| e.variation_id == v).collect())
                .collect()
        }
    };

    let fold_of = |e: &GgpExample| -> usize {
        global_plan
            .folds
            .iter()
            .position(|f| f.contains(&e.net_id))
            .expect("every example is in the global plan")
    };

    struct Job<'a> {
        group_idx: usize,
        fold_idx: usize,
        train: Vec<&'a GgpExample>,
        test: Vec<&'a GgpExample>,
    }
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for (group_idx, group) in groups.iter().enumerate() {
        for fold_idx in 0..n_folds {
            let (test, train): (Vec<_>, Vec<_>) =
                group.iter().copied().partition(|e| fold_of(e) == fold_idx);
            if test.is_empty() {
                skipped.push(format!(
                    "group {group_idx} fold {fold_idx}: no test examples"
                ));
                continue;
            }
            if train.len() < min_train_examples(family) {
                skipped.push(format!(
                    "group {group_idx} fold {fold_idx}: {} training examples < {}",
                    train.len(),
                    min_train_examples(family)
                ));
                continue;
            }
            jobs.push(Job { group_idx, fold_idx, train, test });
        }
    }
    if jobs.is_empty() {
        return Err(Error::Eval("every fold was skipped; nothing to evaluate".to_string()));
    }

    let results: Vec<Result<(usize, Vec<CalPoint>, bool)>> = jobs
        .par_iter()
        .map(|job| {
            let train_owned: Vec<GgpExample> = job.train.iter().map(|&e| e.clone()).collect();
            let fit_seed = seed::mix(&[eval_seed, job.group_idx as u64, job.fold_idx as u64]);
            let model = ggp::fit_family(&train_owned, family, mode, fit_seed)?;
            let rank_deficient = matches!(&model, GgpModel::Linear(m) if m.rank_deficient);
            let mut points = Vec::with_capacity(job.test.len());
            for e in &job.test {
                points.push(CalPoint {
                    net_id: e.net_id,
                    prediction: model.predict(&e.signature)?,
                    label: e.label,
                    fold: job.fold_idx,
                });
            }
            Ok((job.fold_idx, points, rank_deficient))
        })
        .collect();

    let mut calibration = Vec::new();
    let mut rank_deficient_fits = 0;
    for r in results {
        let (_, points, rd) = r?;
        calibration.extend(points);
        rank_deficient_fits += usize::from(rd);
    }

    let preds: Vec<f64> = calibration.iter().map(|c| c.prediction).collect();
    let labels: Vec<f64> = calibration.iter().map(|c| c.label).collect();
    let r2 = r_squared(&preds, &labels)?;
    let l1 = l1_loss(&preds, &labels)?;

    let per_fold = (0..n_folds)
        .map(|fold| {
            let fp: Vec<f64> = calibration.iter().filter(|c| c.fold == fold).map(|c| c.prediction).collect();
            let fl: Vec<f64> = calibration.iter().filter(|c| c.fold == fold).map(|c| c.label).collect();
            FoldMetrics {
                fold,
                key: global_plan.fold_keys[fold].clone(),
                n: fp.len(),
                r2: r_squared(&fp, &fl).ok(),
                l1: l1_loss(&fp, &fl).ok(),
            }
        })
        .collect();

    Ok(EvalOutcome {
        report: EvalReport {
            scope,
            regime,
            family,
            label_mode,
            lambda,
            r2,
            l1,
            n: calibration.len(),
            groups: groups.len(),
            per_fold,
            skipped,
            rank_deficient_fits,
        },
        calibration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ggp::test_support::{example, random_rows};
    use proptest::prelude::*;

    #[test]
    fn r_squared_hand_cases() {
        let labels = [0.0, 1.0, 2.0];
        assert_eq!(r_squared(&labels, &labels).unwrap(), 1.0);
        assert_eq!(r_squared(&[1.0, 1.0, 1.0], &labels).unwrap(), 0.0);
        assert_eq!(r_squared(&[0.0, 0.0, 0.0], &labels).unwrap(), -1.5);
    }

    #[test]
    fn r_squared_rejects_degenerate_input() {
        assert!(r_squared(&[1.0], &[1.0, 2.0]).is_err());
        assert!(r_squared(&[1.0, 2.0], &[3.0, 3.0]).is_err());
        assert!(r_squared(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn l1_hand_cases() {
        assert_eq!(l1_loss(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        assert_eq!(l1_loss(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        let expect = ((0.1f64 - 0.0).abs() + (0.2f64 - 0.4).abs()) / 2.0;
        assert_eq!(l1_loss(&[0.1, 0.2], &[0.0, 0.4]).unwrap(), expect);
        assert!((expect - 0.15).abs() < 1e-15);
        assert!(l1_loss(&[], &[]).is_err());
        assert!(l1_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn balanced_partition_of_27_is_5_5_5_6_6() {
        let ids: Vec<u32> = (0..27).collect();
        let sizes: Vec<usize> = balanced_partition(&ids, 5).iter().map(|g| g.len()).collect();
        assert_eq!(sizes, vec![5, 5, 5, 6, 6]);
        let ids: Vec<u32> = (0..100).collect();
        let sizes: Vec<usize> = balanced_partition(&ids, 5).iter().map(|g| g.len()).collect();
        assert_eq!(sizes, vec![20; 5]);
        let ids: Vec<u32> = (0..12).collect();
        let sizes: Vec<usize> = balanced_partition(&ids, 5).iter().map(|g| g.len()).collect();
        assert_eq!(sizes, vec![2, 2, 2, 3, 3]);
    }

    /// Synthetic population: `variations x seeds x hparams` nets with ids
    /// encoding their provenance.
    fn population(variations: u32, seeds: u64, hparams: u32, lambda: f64) -> Vec<GgpExample> {
        let mut rng = crate::seed::rng(&[100]);
        let mut out = Vec::new();
        let mut net_id = 0u64;
        for v in 0..variations {
            for s in 1..=seeds {
                for h in 0..hparams {
                    let rows = random_rows(&mut rng, (h % 4) as usize + 1, lambda);
                    let mut e = example(rows, lambda, 0.0, net_id);
                    e.variation_id = v;
                    e.data_seed = s;
                    e.hparam_id = h;
                    // label: noiseless linear function of the summed rows
                    let sum = crate::ggp::aggregate_sum(&e.signature);
                    e.label = 0.1 + 0.5 * sum[0] - 0.3 * sum[3] + 0.05 * sum[4];
                    out.push(e);
                    net_id += 1;
                }
            }
        }
        out
    }

    #[test]
    fn same_dist_folds_are_keyed_by_seed() {
        let pop = population(2, 5, 3, 0.5);
        let plan = make_folds(&pop, Regime::SameDist, Scope::SingleModel).unwrap();
        assert_eq!(plan.folds.len(), 5);
        plan.check_partition(&pop).unwrap();
        for (fold, key) in plan.folds.iter().zip(&plan.fold_keys) {
            let seed: u64 = key.strip_prefix("seed=").unwrap().parse().unwrap();
            for id in fold {
                let e = pop.iter().find(|e| e.net_id == *id).unwrap();
                assert_eq!(e.data_seed, seed);
            }
        }
    }

    #[test]
    fn unseen_hparams_folds_never_share_an_id() {
        let pop = population(3, 2, 20, 0.5);
        let plan = make_folds(&pop, Regime::UnseenHparams, Scope::PerDataset).unwrap();
        assert_eq!(plan.folds.len(), 5);
        plan.check_partition(&pop).unwrap();
        let mut fold_hparams: Vec<std::collections::HashSet<u32>> = Vec::new();
        for fold in &plan.folds {
            let hset = fold
                .iter()
                .map(|id| pop.iter().find(|e| e.net_id == *id).unwrap().hparam_id)
                .collect();
            fold_hparams.push(hset);
        }
        for i in 0..5 {
            for j in i + 1..5 {
                assert!(fold_hparams[i].is_disjoint(&fold_hparams[j]));
            }
        }
    }

    #[test]
    fn unseen_datasets_requires_single_model_scope() {
        let pop = population(6, 2, 3, 2.5);
        assert!(matches!(
            make_folds(&pop, Regime::UnseenDatasets, Scope::PerDataset),
            Err(Error::Config(_))
        ));
        let plan = make_folds(&pop, Regime::UnseenDatasets, Scope::SingleModel).unwrap();
        plan.check_partition(&pop).unwrap();
    }

    #[test]
    fn per_dataset_linear_fits_a_linear_population() {
        let pop = population(3, 3, 8, 0.5);
        let out = evaluate_regime(
            &pop,
            Regime::SameDist,
            Scope::PerDataset,
            Family::Linear,
            LabelMode::Gap,
            7,
        )
        .unwrap();
        assert!(out.report.r2 > 0.999, "r2 = {}", out.report.r2);
        assert!(out.report.l1 < 1e-3);
        assert_eq!(out.report.groups, 3);
        assert_eq!(out.report.n, pop.len());
        // pooled metrics recompute exactly from the calibration pairs
        let preds: Vec<f64> = out.calibration.iter().map(|c| c.prediction).collect();
        let labels: Vec<f64> = out.calibration.iter().map(|c| c.label).collect();
        assert_eq!(out.report.r2, r_squared(&preds, &labels).unwrap());
    }

    #[test]
    fn pooled_r2_is_not_the_mean_of_fold_r2() {
        // Labels depend strongly on the fold key (seed), so fold-local R^2 is
        // much worse than pooled R^2; the report must carry the pooled value.
        let mut pop = population(1, 4, 10, 0.5);
        for e in &mut pop {
            e.label += e.data_seed as f64; // strong per-fold offset
        }
        let out = evaluate_regime(
            &pop,
            Regime::SameDist,
            Scope::SingleModel,
            Family::Linear,
            LabelMode::Gap,
            3,
        )
        .unwrap();
        let preds: Vec<f64> = out.calibration.iter().map(|c| c.prediction).collect();
        let labels: Vec<f64> = out.calibration.iter().map(|c| c.label).collect();
        let pooled = r_squared(&preds, &labels).unwrap();
        assert_eq!(out.report.r2, pooled);
        let fold_mean: f64 = out
            .report
            .per_fold
            .iter()
            .filter_map(|f| f.r2)
            .sum::<f64>()
            / out.report.per_fold.len() as f64;
        assert!((pooled - fold_mean).abs() > 0.05, "pooled {pooled} vs fold mean {fold_mean}");
    }

    #[test]
    fn too_small_folds_are_skipped_and_reported() {
        // 4 hparams x 2 seeds = 8 examples per variation; same-dist folds
        // leave only 4 training examples, below the linear minimum of 6.
        let pop = population(1, 2, 4, 0.5);
        let err = evaluate_regime(
            &pop,
            Regime::SameDist,
            Scope::PerDataset,
            Family::Linear,
            LabelMode::Gap,
            1,
        );
        assert!(err.is_err());
        // With three seeds there are 8 training examples per fold; fine.
        let pop = population(1, 3, 4, 0.5);
        let out = evaluate_regime(
            &pop,
            Regime::SameDist,
            Scope::PerDataset,
            Family::Linear,
            LabelMode::Gap,
            1,
        )
        .unwrap();
        assert!(out.report.skipped.is_empty());
    }

    #[test]
    fn mixed_lambda_examples_are_rejected() {
        let mut pop = population(1, 3, 4, 0.5);
        pop[0].signature.lambda = 2.5;
        assert!(evaluate_regime(
            &pop,
            Regime::SameDist,
            Scope::SingleModel,
            Family::Linear,
            LabelMode::Gap,
            1
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn r2_is_invariant_under_shared_affine_maps(
            shift in -10.0f64..10.0,
            scale in prop::sample::select(vec![-3.0f64, -0.5, 0.25, 1.0, 7.5]),
            seed in 0u64..50,
        ) {
            let mut rng = crate::seed::rng(&[seed]);
            use rand::Rng;
            let labels: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let preds: Vec<f64> = labels.iter().map(|l| l + rng.random::<f64>() * 0.1).collect();
            let base = r_squared(&preds, &labels).unwrap();
            let shifted = r_squared(
                &preds.iter().map(|p| p + shift).collect::<Vec<_>>(),
                &labels.iter().map(|l| l + shift).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert!((base - shifted).abs() < 1e-12);
            let scaled = r_squared(
                &preds.iter().map(|p| p * scale).collect::<Vec<_>>(),
                &labels.iter().map(|l| l * scale).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert!((base - scaled).abs() < 1e-10);
        }

        #[test]
        fn l1_triangle_inequality(seed in 0u64..50) {
            let mut rng = crate::seed::rng(&[seed, 1]);
            use rand::Rng;
            let a: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
            let c: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
            let ab = l1_loss(&a, &b).unwrap();
            let bc = l1_loss(&b, &c).unwrap();
            let ac = l1_loss(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
