//! Acceptance suite: one test per release criterion, each printing a PASS
//! line (run with `--nocapture` to see them).
//!
//! Published-scale results (13,500 networks trained for 10^6 steps) are far
//! beyond a workstation budget, so the gate rests on exact oracles plus a
//! desk-scale end-to-end run: the 720-unit preset is swept twice for the
//! determinism check and reused by the invariant, hygiene, and quality
//! criteria below.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use gappred_core::eval::{self, LabelMode, Regime, Scope};
use gappred_core::ggp::{self, Family, GgpExample};
use gappred_core::margin::{self, SignatureMatrix};
use gappred_core::net::{self, BatchTape, Mode, NetHparams, Network, OptimizerKind};
use gappred_core::pipeline::{self, RunConfig, RunManifest, RunStore};
use gappred_core::seed::{self, stream};
use gappred_core::spiral;

// ---------------------------------------------------------------------------
// Desk-scale fixture: the same config swept twice, shared by several tests.

struct DeskRuns {
    run1: PathBuf,
    run2: PathBuf,
    manifest1: RunManifest,
    manifest2: RunManifest,
    _keep: (tempfile::TempDir, tempfile::TempDir),
}

fn desk_runs() -> &'static DeskRuns {
    static RUNS: OnceLock<DeskRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let config = RunConfig::desk();
        let d1 = tempfile::tempdir().expect("tempdir");
        let d2 = tempfile::tempdir().expect("tempdir");
        let started = Instant::now();
        let manifest1 = pipeline::run_sweep(&config, d1.path()).expect("first desk sweep");
        let manifest2 = pipeline::run_sweep(&config, d2.path()).expect("second desk sweep");
        eprintln!("[fixture] two desk sweeps in {:.1}s", started.elapsed().as_secs_f64());
        DeskRuns {
            run1: d1.path().to_path_buf(),
            run2: d2.path().to_path_buf(),
            manifest1,
            manifest2,
            _keep: (d1, d2),
        }
    })
}

#[test]
fn acceptance_0_paper_scale_note() {
    println!(
        "[NOTE] published-scale table values are out of budget by design; \
         the criteria below are the acceptance gate"
    );
}

// ---------------------------------------------------------------------------
// Gradient oracle.

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn jittered_net(widths: Vec<u32>, bn: bool, dropout: f64, net_seed: u64) -> Network {
    let hp = NetHparams {
        layer_widths: widths,
        optimizer: OptimizerKind::Sgd,
        learning_rate: 0.1,
        batch_size: 8,
        batch_norm: bn,
        dropout_rate: dropout,
        hparam_id: 0,
    };
    let mut net = net::init(&hp, net_seed).expect("init");
    // Fresh nets have all-zero biases, which can park pre-activations
    // exactly on the ReLU kink; jitter every tensor off it.
    let mut rng = ChaCha8Rng::seed_from_u64(net_seed ^ 0xDEAD);
    net.for_each_tensor_mut(|_, t| {
        t.iter_mut().for_each(|x| *x += rng.random::<f64>() * 0.2 - 0.1);
    });
    net
}

/// Smallest |ReLU input| across all hidden layers and batch rows. Finite
/// differences are only trustworthy when every pre-activation sits farther
/// from the kink than the perturbation can reach.
fn min_relu_margin(net: &Network, tape: &BatchTape) -> f64 {
    let mut margin = f64::INFINITY;
    for (hl, lt) in net.hidden.iter().zip(&tape.layers) {
        let dout = hl.affine.out_dim;
        for b in 0..tape.batch {
            for j in 0..dout {
                let u = match &hl.bn {
                    Some(bn) => bn.gamma[j] * lt.xhat[b * dout + j] + bn.beta[j],
                    None => lt.z[b * dout + j],
                };
                margin = margin.min(u.abs());
            }
        }
    }
    margin
}

/// Draws a batch whose pre-activations all clear the kink margin in both
/// modes, retrying with fresh inputs if needed.
fn pick_batch(net: &Network, net_seed: u64, masks: Option<&[Vec<f64>]>) -> (Vec<f64>, Vec<i8>) {
    for attempt in 0..50u64 {
        let mut rng = seed::rng(&[net_seed, attempt, 0xBA7C4]);
        let batch = 6;
        let inputs: Vec<f64> = (0..batch * 2).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let labels: Vec<i8> =
            (0..batch).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let inf = net.batch_forward(&inputs, batch, Mode::Inference, None).expect("forward");
        let trn = net.batch_forward(&inputs, batch, Mode::Training, masks).expect("forward");
        let margin = min_relu_margin(net, &inf).min(min_relu_margin(net, &trn));
        if margin > 10.0 * FD_STEP {
            return (inputs, labels);
        }
    }
    panic!("could not find a kink-free batch for net seed {net_seed}");
}

fn batch_loss(net: &Network, inputs: &[f64], labels: &[i8], mode: Mode, masks: Option<&[Vec<f64>]>) -> f64 {
    let tape = net.batch_forward(inputs, labels.len(), mode, masks).expect("forward");
    let mut d = Vec::new();
    net::sigmoid_ce_into(&tape.logits, labels, &mut d)
}

/// Checks every parameter gradient of `net` against central differences.
/// Returns the number of parameters checked.
fn check_params(
    net: &mut Network,
    inputs: &[f64],
    labels: &[i8],
    mode: Mode,
    masks: Option<&[Vec<f64>]>,
) -> usize {
    let tape = net.batch_forward(inputs, labels.len(), mode, masks).expect("forward");
    let mut d_logits = Vec::new();
    net::sigmoid_ce_into(&tape.logits, labels, &mut d_logits);
    let mut grads = net::NetGrads::zeros_like(net);
    net.batch_backward_into(&tape, &d_logits, &mut grads);

    let sizes = net.tensor_sizes();
    let mut checked = 0;
    for (ti, &size) in sizes.iter().enumerate() {
        for k in 0..size {
            let bump = |net: &mut Network, delta: f64| {
                net.for_each_tensor_mut(|idx, t| {
                    if idx == ti {
                        t[k] += delta;
                    }
                });
            };
            bump(net, FD_STEP);
            let up = batch_loss(net, inputs, labels, mode, masks);
            bump(net, -2.0 * FD_STEP);
            let down = batch_loss(net, inputs, labels, mode, masks);
            bump(net, FD_STEP);
            let fd = (up - down) / (2.0 * FD_STEP);
            let bp = grads.tensors[ti][k];
            assert!(
                rel_err(fd, bp) < GRAD_TOL,
                "{mode:?} tensor {ti} elem {k}: fd={fd} bp={bp}"
            );
            checked += 1;
        }
    }
    checked
}

/// Checks the output-vs-activation gradient at every layer for every batch
/// row. Returns the number of gradient components checked.
fn check_activation_grads(net: &Network, inputs: &[f64]) -> usize {
    let mut checked = 0;
    for row in inputs.chunks(2) {
        let trace = net.forward_inference([row[0], row[1]]).expect("trace");
        for layer in 0..=net.depth() + 1 {
            let grad = net.grad_wrt_activation(&trace, layer).expect("grad");
            let mut x = trace.layers[layer].clone();
            for (i, g) in grad.iter().enumerate() {
                x[i] += FD_STEP;
                let up = net.forward_from(layer, &x).expect("forward_from");
                x[i] -= 2.0 * FD_STEP;
                let down = net.forward_from(layer, &x).expect("forward_from");
                x[i] += FD_STEP;
                let fd = (up - down) / (2.0 * FD_STEP);
                assert!(
                    rel_err(fd, *g) < GRAD_TOL,
                    "layer {layer} coord {i}: fd={fd} bp={g}"
                );
                checked += 1;
            }
        }
    }
    checked
}

#[test]
fn acceptance_1_gradient_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE0);
    let mut nets_checked = 0;
    let mut params_checked = 0;
    let mut activations_checked = 0;

    for depth in 1..=4usize {
        for bn in [false, true] {
            for net_seed_base in 0..3u64 {
                let widths: Vec<u32> =
                    (0..depth).map(|_| [4u32, 8, 16][rng.random_range(0..3)]).collect();
                let net_seed = depth as u64 * 100 + u64::from(bn) * 10 + net_seed_base;
                let mut net = jittered_net(widths, bn, 0.0, net_seed);
                let (inputs, labels) = pick_batch(&net, net_seed, None);
                params_checked += check_params(&mut net, &inputs, &labels, Mode::Inference, None);
                params_checked += check_params(&mut net, &inputs, &labels, Mode::Training, None);
                activations_checked += check_activation_grads(&net, &inputs);
                nets_checked += 1;
            }
        }
    }
    // training-mode gradients with frozen dropout masks
    for (i, dropout) in [0.25, 0.5, 0.25, 0.5].into_iter().enumerate() {
        let net_seed = 900 + i as u64;
        let mut net = jittered_net(vec![8, 8], i % 2 == 0, dropout, net_seed);
        let mut mask_rng = ChaCha8Rng::seed_from_u64(net_seed);
        let masks = net.draw_dropout_masks(6, &mut mask_rng);
        let (inputs, labels) = pick_batch(&net, net_seed, Some(&masks));
        params_checked += check_params(&mut net, &inputs, &labels, Mode::Training, Some(&masks));
        nets_checked += 1;
    }

    let elapsed = started.elapsed();
    assert!(nets_checked >= 20, "only {nets_checked} nets checked");
    assert!(elapsed.as_secs_f64() < 60.0, "gradient oracle took {elapsed:?}");
    println!(
        "[PASS] gradient oracle: {params_checked} parameter and {activations_checked} activation \
         gradients on {nets_checked} nets within rel {GRAD_TOL} of central differences \
         ({:.1}s < 60s)",
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// OLS oracle.

/// Independent least-squares route: normal equations solved by Gaussian
/// elimination with partial pivoting.
fn normal_equations(rows: &[[f64; 6]], y: &[f64]) -> [f64; 6] {
    let mut ata = [[0.0f64; 6]; 6];
    let mut aty = [0.0f64; 6];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..6 {
            aty[i] += r[i] * yi;
            for j in 0..6 {
                ata[i][j] += r[i] * r[j];
            }
        }
    }
    let mut m = [[0.0f64; 7]; 6];
    for i in 0..6 {
        m[i][..6].copy_from_slice(&ata[i]);
        m[i][6] = aty[i];
    }
    for col in 0..6 {
        let pivot = (col..6).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for j in col..7 {
            m[col][j] /= p;
        }
        for r in 0..6 {
            if r != col {
                let f = m[r][col];
                for j in col..7 {
                    m[r][j] -= f * m[col][j];
                }
            }
        }
    }
    std::array::from_fn(|i| m[i][6])
}

#[test]
fn acceptance_2_ols_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE1);
    for system in 0..100 {
        let examples: Vec<GgpExample> = (0..50)
            .map(|i| {
                let row: [f64; 5] = std::array::from_fn(|_| rng.random::<f64>() * 2.0 - 1.0);
                GgpExample {
                    signature: SignatureMatrix { rows: vec![row], lambda: 0.5 },
                    label: rng.random::<f64>() * 2.0 - 1.0,
                    net_id: i,
                    variation_id: 0,
                    data_seed: 1,
                    hparam_id: i as u32,
                }
            })
            .collect();
        let model = ggp::fit_linear(&examples).expect("fit");
        let design: Vec<[f64; 6]> = examples
            .iter()
            .map(|e| {
                let s = ggp::aggregate_sum(&e.signature);
                [1.0, s[0], s[1], s[2], s[3], s[4]]
            })
            .collect();
        let ys: Vec<f64> = examples.iter().map(|e| e.label).collect();
        let oracle = normal_equations(&design, &ys);
        let mut fitted = vec![model.intercept];
        fitted.extend_from_slice(&model.coef);
        for (a, b) in fitted.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "system {system}: {a} vs {b}");
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "OLS oracle took {elapsed:?}");
    println!(
        "[PASS] OLS oracle: 100 random 50x5 systems match normal equations within 1e-8 \
         ({:.2}s < 5s)",
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Metric oracle.

#[test]
fn acceptance_3_metric_oracle() {
    // hand-computed cases, exact
    let labels = [0.0, 1.0, 2.0];
    assert_eq!(eval::r_squared(&labels, &labels).unwrap(), 1.0);
    assert_eq!(eval::r_squared(&[1.0, 1.0, 1.0], &labels).unwrap(), 0.0);
    assert_eq!(eval::r_squared(&[0.0, 0.0, 0.0], &labels).unwrap(), -1.5);
    assert_eq!(eval::l1_loss(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
    assert_eq!(eval::l1_loss(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
    let hand = ((0.1f64 - 0.0).abs() + (0.2f64 - 0.4).abs()) / 2.0;
    assert_eq!(eval::l1_loss(&[0.1, 0.2], &[0.0, 0.4]).unwrap(), hand);

    // affine invariance to 1e-12 over deterministic random cases
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE2);
    for _ in 0..50 {
        let labels: Vec<f64> = (0..25).map(|_| rng.random::<f64>()).collect();
        let preds: Vec<f64> = labels.iter().map(|l| l + 0.2 * (rng.random::<f64>() - 0.5)).collect();
        let base = eval::r_squared(&preds, &labels).unwrap();
        let shift = rng.random::<f64>() * 20.0 - 10.0;
        let scale = [0.25, -2.0, 5.0][rng.random_range(0..3)];
        let shifted = eval::r_squared(
            &preds.iter().map(|p| p + shift).collect::<Vec<_>>(),
            &labels.iter().map(|l| l + shift).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!((base - shifted).abs() < 1e-12, "shift: {base} vs {shifted}");
        let scaled = eval::r_squared(
            &preds.iter().map(|p| p * scale).collect::<Vec<_>>(),
            &labels.iter().map(|l| l * scale).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!((base - scaled).abs() < 1e-12, "scale: {base} vs {scaled}");
    }
    println!("[PASS] metric oracle: hand cases exact; R2 affine invariance within 1e-12");
}

// ---------------------------------------------------------------------------
// Margin invariants over the desk run.

#[test]
fn acceptance_4_margin_invariants() {
    let runs = desk_runs();
    let mut signatures = 0usize;
    for name in runs.manifest1.record_files.values() {
        let records = pipeline::read_records(&runs.run1.join(name)).unwrap();
        for r in &records {
            r.check().unwrap();
            let Some(sig) = r.signature_matrix() else { continue };
            sig.check_invariants().unwrap();
            assert_eq!(
                sig.rows.len(),
                r.layer_widths.len() + 2,
                "net {}: row count != depth + 2",
                r.net_id
            );
            signatures += 1;
        }
    }

    // Output-row sign audit: rebuild one unit deterministically and compare
    // per-point distance signs against classification correctness.
    let config = &runs.manifest1.config;
    let records = pipeline::read_records(
        &runs.run1.join(runs.manifest1.record_file_for_lambda(0.5).unwrap()),
    )
    .unwrap();
    let record = records.iter().find(|r| !r.diverged).expect("a live record");
    let data = spiral::generate_train(&record.spec()).unwrap();
    let init_seed = seed::mix(&[config.root_seed, record.net_id, stream::NET_INIT]);
    let train_seed = seed::mix(&[config.root_seed, record.net_id, stream::NET_TRAIN]);
    let net = net::init(&record.hparams(), init_seed).unwrap();
    let outcome = net::train(net, &data, config.train_steps, train_seed).unwrap();
    assert!(!outcome.diverged);

    let traces: Vec<_> =
        data.points.iter().map(|p| outcome.net.forward_inference([p.x, p.y]).unwrap()).collect();
    let outputs: Vec<&[f64]> = traces.iter().map(|t| t.layers.last().unwrap().as_slice()).collect();
    let tv = margin::total_variation(&outputs).unwrap();
    let mut audited = 0;
    for (trace, point) in traces.iter().zip(&data.points).take(50) {
        let f = trace.output();
        let d = margin::layer_distance(f, point.label, 1.0, tv, record.lambda).unwrap();
        let correct = (f > 0.0 && point.label > 0) || (f < 0.0 && point.label < 0);
        assert_eq!(d > 0.0, correct, "net {} point ({}, {})", record.net_id, point.x, point.y);
        audited += 1;
    }
    assert_eq!(audited, 50);
    println!(
        "[PASS] margin invariants: {signatures} signatures bounded/sorted/shaped; \
         50-point output-row sign audit clean"
    );
}

// ---------------------------------------------------------------------------
// Fold hygiene over the desk run.

#[test]
fn acceptance_5_fold_hygiene() {
    let runs = desk_runs();
    let records = pipeline::read_records(
        &runs.run1.join(runs.manifest1.record_file_for_lambda(0.5).unwrap()),
    )
    .unwrap();
    let examples = pipeline::examples_from_records(&records, LabelMode::Gap);
    let by_id = |id: u64| examples.iter().find(|e| e.net_id == id).unwrap();

    let mut violations = 0usize;
    for (regime, scope) in [
        (Regime::SameDist, Scope::PerDataset),
        (Regime::UnseenHparams, Scope::PerDataset),
        (Regime::UnseenDatasets, Scope::SingleModel),
    ] {
        let plan = eval::make_folds(&examples, regime, scope).unwrap();
        plan.check_partition(&examples).unwrap();
        let key_sets: Vec<std::collections::HashSet<u64>> = plan
            .folds
            .iter()
            .map(|fold| {
                fold.iter()
                    .map(|id| {
                        let e = by_id(*id);
                        match regime {
                            Regime::SameDist => e.data_seed,
                            Regime::UnseenHparams => u64::from(e.hparam_id),
                            Regime::UnseenDatasets => u64::from(e.variation_id),
                        }
                    })
                    .collect()
            })
            .collect();
        for i in 0..key_sets.len() {
            for j in i + 1..key_sets.len() {
                if !key_sets[i].is_disjoint(&key_sets[j]) {
                    violations += 1;
                }
            }
        }
    }
    assert_eq!(violations, 0);
    println!("[PASS] fold hygiene: no seed/hparam/variation id crosses a fold boundary");
}

// ---------------------------------------------------------------------------
// Determinism of the full desk run.

#[test]
fn acceptance_6_determinism() {
    let runs = desk_runs();
    assert_eq!(runs.manifest1, runs.manifest2);
    let mut bytes = 0usize;
    for name in runs.manifest1.record_files.values() {
        let a = std::fs::read(runs.run1.join(name)).unwrap();
        let b = std::fs::read(runs.run2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical configs");
        bytes += a.len();
    }
    println!(
        "[PASS] determinism: two desk sweeps produced byte-identical record payloads \
         ({bytes} bytes compared)"
    );
}

// ---------------------------------------------------------------------------
// Desk-scale end-to-end quality gate.

#[test]
fn acceptance_7_desk_end_to_end() {
    let runs = desk_runs();
    assert_eq!(runs.manifest1.total_units, 720);
    let mut store = RunStore::open(&runs.run1).unwrap();

    let linear = store
        .evaluate_cell(Scope::PerDataset, Regime::SameDist, Family::Linear, LabelMode::Gap, 1)
        .unwrap();
    assert!(
        linear.report.r2 > 0.5,
        "per-dataset same-dist linear pooled R2 = {} <= 0.5",
        linear.report.r2
    );
    for fold in &linear.report.per_fold {
        let r2 = fold.r2.expect("fold metrics");
        assert!(r2 > 0.0, "fold {} ({}) R2 = {r2} <= 0", fold.fold, fold.key);
    }
    store.record_metric(&linear.report).unwrap();
    let reloaded = RunManifest::load(&runs.run1).unwrap();
    let entry = reloaded
        .metrics
        .get("per_dataset/same_dist/linear/gap")
        .expect("metric recorded in manifest");
    assert_eq!(entry.r2, linear.report.r2);

    println!(
        "[PASS] desk end-to-end: per-dataset same-dist linear pooled R2 = {:.3} > 0.5; \
         every fold beats the constant-mean predictor; value recorded in manifest",
        linear.report.r2
    );

    // Expectation, not a hard gate: the iterative families should match or
    // beat the linear baseline.
    for family in [Family::Dnn, Family::Rnn] {
        let outcome = store
            .evaluate_cell(Scope::PerDataset, Regime::SameDist, family, LabelMode::Gap, 1)
            .unwrap();
        store.record_metric(&outcome.report).unwrap();
        if outcome.report.r2 >= linear.report.r2 {
            println!(
                "[PASS] expectation: {family} pooled R2 = {:.3} >= linear {:.3}",
                outcome.report.r2, linear.report.r2
            );
        } else {
            println!(
                "[WARN] expectation: {family} pooled R2 = {:.3} < linear {:.3} (reported, not gated)",
                outcome.report.r2, linear.report.r2
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Divergence handling.

#[test]
fn acceptance_8_divergence_handling() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::desk();
    config.preset = "custom".to_string();
    config.train_steps = 2_000;
    config.test_size = 1_000;
    config.hparam_count = 6;
    config.grid.loops = vec![1];
    config.grid.noise_sigma = vec![0.05];
    config.grid.num_train = vec![100];
    config.grid.data_seeds = vec![1];

    let mut units = pipeline::plan_units(&config).unwrap();
    let victim = 2usize;
    units[victim].hparams.learning_rate = 1e6;
    units[victim].hparams.optimizer = OptimizerKind::Sgd;
    units[victim].hparams.dropout_rate = 0.0;
    let victim_id = units[victim].net_id;

    let manifest = pipeline::run_sweep_with_units(&config, &units, dir.path()).unwrap();
    assert_eq!(manifest.diverged, 1, "expected exactly the injected unit to diverge");
    assert!(manifest.failed.is_empty());

    let records = pipeline::read_records(
        &dir.path().join(manifest.record_file_for_lambda(0.5).unwrap()),
    )
    .unwrap();
    let bad = records.iter().find(|r| r.net_id == victim_id).unwrap();
    assert!(bad.diverged);
    assert!(bad.signature.is_none() && bad.gap.is_none());

    let examples = pipeline::examples_from_records(&records, LabelMode::Gap);
    assert_eq!(examples.len(), records.len() - 1);
    assert!(examples.iter().all(|e| e.net_id != victim_id));
    println!(
        "[PASS] divergence handling: injected lr=1e6 unit flagged, excluded from evaluation, \
         counted in the manifest"
    );
}
