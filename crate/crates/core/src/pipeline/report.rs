//! Loading a finished run and assembling the 3-family x 5-cell results
//! table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{self, EvalOutcome, EvalReport, LabelMode, Regime, Scope};
use crate::ggp::Family;
use crate::seed;

use super::record::{lambda_tag, MetricEntry};
use super::{examples_from_records, read_records, RunConfig, RunManifest, TrainedNetRecord};

/// The five evaluation cells, in table order.
pub const CELLS: [(Scope, Regime); 5] = [
    (Scope::PerDataset, Regime::SameDist),
    (Scope::PerDataset, Regime::UnseenHparams),
    (Scope::SingleModel, Regime::SameDist),
    (Scope::SingleModel, Regime::UnseenHparams),
    (Scope::SingleModel, Regime::UnseenDatasets),
];

/// Squash constant a family's features use in a given scope. The linear
/// model always reads the dataset-dependent extraction; the iterative
/// models switch to the wider constant for single-model tasks.
pub fn lambda_for(family: Family, scope: Scope, config: &RunConfig) -> f64 {
    match (family, scope) {
        (Family::Linear, _) | (_, Scope::PerDataset) => config.lambda_dataset_dependent,
        (_, Scope::SingleModel) => config.lambda_dataset_independent,
    }
}

/// An opened run directory: manifest plus all record files.
pub struct RunStore {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    records: BTreeMap<String, Vec<TrainedNetRecord>>,
}

impl RunStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(dir)?;
        let mut records = BTreeMap::new();
        for (tag, name) in &manifest.record_files {
            records.insert(tag.clone(), read_records(&dir.join(name))?);
        }
        Ok(RunStore { dir: dir.to_path_buf(), manifest, records })
    }

    pub fn records_for(&self, lambda: f64) -> Result<&[TrainedNetRecord]> {
        self.records
            .get(&lambda_tag(lambda))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::config(format!(
                    "run was not extracted at lambda {lambda}; available: {:?}",
                    self.records.keys().collect::<Vec<_>>()
                ))
            })
    }

    pub fn diverged_count(&self) -> usize {
        self.manifest.diverged
    }

    /// Evaluates one (scope, regime, family) cell, reading the record file
    /// extracted at the constant this family/scope needs.
    pub fn evaluate_cell(
        &self,
        scope: Scope,
        regime: Regime,
        family: Family,
        label_mode: LabelMode,
        eval_seed: u64,
    ) -> Result<EvalOutcome> {
        let lambda = lambda_for(family, scope, &self.manifest.config);
        let records = self.records_for(lambda)?;
        let examples = examples_from_records(records, label_mode);
        if examples.is_empty() {
            return Err(Error::Eval("no usable (non-diverged) records".to_string()));
        }
        let cell_idx = CELLS.iter().position(|c| *c == (scope, regime)).unwrap_or(CELLS.len()) as u64;
        let family_idx = match family {
            Family::Linear => 0u64,
            Family::Dnn => 1,
            Family::Rnn => 2,
        };
        eval::evaluate_regime(
            &examples,
            regime,
            scope,
            family,
            label_mode,
            seed::mix(&[eval_seed, cell_idx, family_idx]),
        )
    }

    /// Records a cell's headline metrics into the manifest on disk.
    pub fn record_metric(&mut self, report: &EvalReport) -> Result<()> {
        let key = format!(
            "{}/{}/{}/{}",
            report.scope, report.regime, report.family, report.label_mode
        );
        self.manifest
            .metrics
            .insert(key, MetricEntry { r2: report.r2, l1: report.l1, n: report.n });
        self.manifest.save(&self.dir)
    }
}

/// Evaluates every family over every cell. Cells that cannot be evaluated
/// (for example a missing extraction constant) abort with the underlying
/// error rather than silently dropping a column.
pub fn run_report(store: &RunStore, label_mode: LabelMode, eval_seed: u64) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::with_capacity(15);
    for family in [Family::Linear, Family::Dnn, Family::Rnn] {
        for (scope, regime) in CELLS {
            let outcome = store
                .evaluate_cell(scope, regime, family, label_mode, eval_seed)
                .map_err(|e| {
                    Error::Eval(format!("cell {scope}/{regime}/{family}/{label_mode}: {e}"))
                })?;
            reports.push(outcome.report);
        }
    }
    Ok(reports)
}

/// Renders reports as an aligned text table mirroring the published layout:
/// three family rows, five (scope, regime) column groups, R^2 and L1 per
/// group. R^2 is shown to 3 decimals and L1 to 4; stored metrics keep full
/// precision.
pub fn format_table(reports: &[EvalReport], label_mode: LabelMode, excluded_diverged: usize) -> String {
    let cell = |family: Family, scope: Scope, regime: Regime| -> String {
        match reports.iter().find(|r| {
            r.family == family && r.scope == scope && r.regime == regime && r.label_mode == label_mode
        }) {
            Some(r) => format!("{:>7.3} {:>8.4}", r.r2, r.l1),
            None => format!("{:>7} {:>8}", "-", "-"),
        }
    };
    let mut out = String::new();
    out.push_str(&format!(
        "Labels: {label_mode}    (diverged networks excluded: {excluded_diverged})\n"
    ));
    out.push_str(&format!(
        "{:<8}|{:^33}|{:^50}\n",
        "", "One model per dataset", "Single model"
    ));
    out.push_str(&format!(
        "{:<8}|{:^16}|{:^16}|{:^16}|{:^16}|{:^16}\n",
        "Model", "Same dist", "Unseen hparams", "Same dist", "Unseen hparams", "Unseen datasets"
    ));
    out.push_str(&format!(
        "{:<8}|{:>7} {:>8}|{:>7} {:>8}|{:>7} {:>8}|{:>7} {:>8}|{:>7} {:>8}\n",
        "", "R2", "L1", "R2", "L1", "R2", "L1", "R2", "L1", "R2", "L1"
    ));
    for family in [Family::Linear, Family::Dnn, Family::Rnn] {
        let name = match family {
            Family::Linear => "Linear",
            Family::Dnn => "DNN",
            Family::Rnn => "RNN",
        };
        let mut row = format!("{name:<8}");
        for (scope, regime) in CELLS {
            row.push('|');
            row.push_str(&cell(family, scope, regime));
        }
        row.push('\n');
        out.push_str(&row);
    }
    out
}
