//! The train/extract fan-out.
//!
//! Every (dataset spec, hyperparameter) pair is one independent work unit:
//! generate data, train, measure train/test accuracy, extract one signature
//! per configured squash constant. Unit seeds derive from
//! (root seed, net id), so results are identical no matter how the worker
//! pool schedules them; records are sorted by net id before writing.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::margin;
use crate::net::{self, Checkpoint, NetHparams, Network};
use crate::seed::{self, stream};
use crate::spiral::{self, Purpose, SpiralSpec};
use crate::ENGINE_VERSION;

use super::record::{lambda_tag, records_file_name, write_records, FailedUnit, RunManifest, TrainedNetRecord};
use super::{sample_hparams, RunConfig};

pub const RUN_CONFIG_FILE: &str = "run_config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// One unit of work in the sweep.
#[derive(Debug, Clone)]
pub struct UnitPlan {
    pub net_id: u64,
    pub variation_id: u32,
    pub spec: SpiralSpec,
    pub hparams: NetHparams,
}

/// Expands the config into the full unit list: every dataset spec crossed
/// with every sampled configuration.
pub fn plan_units(config: &RunConfig) -> Result<Vec<UnitPlan>> {
    config.validate()?;
    let hparams = sample_hparams(config.hparam_count, config.hparam_seed)?;
    let specs = config.dataset_specs();
    let mut units = Vec::with_capacity(specs.len() * hparams.len());
    for (spec_idx, (variation_id, spec)) in specs.iter().enumerate() {
        for (h_idx, h) in hparams.iter().enumerate() {
            units.push(UnitPlan {
                net_id: (spec_idx * hparams.len() + h_idx) as u64,
                variation_id: *variation_id,
                spec: *spec,
                hparams: h.clone(),
            });
        }
    }
    Ok(units)
}

struct UnitResult {
    diverged: bool,
    records: Vec<TrainedNetRecord>,
    checkpoint: Option<Checkpoint>,
}

fn base_record(unit: &UnitPlan, lambda: f64) -> TrainedNetRecord {
    TrainedNetRecord {
        net_id: unit.net_id,
        variation_id: unit.variation_id,
        loops: unit.spec.loops,
        noise_sigma: unit.spec.noise_sigma,
        num_train: unit.spec.num_train,
        data_seed: unit.spec.data_seed,
        hparam_id: unit.hparams.hparam_id,
        layer_widths: unit.hparams.layer_widths.clone(),
        optimizer: unit.hparams.optimizer,
        learning_rate: unit.hparams.learning_rate,
        batch_size: unit.hparams.batch_size,
        batch_norm: unit.hparams.batch_norm,
        dropout_rate: unit.hparams.dropout_rate,
        diverged: true,
        train_accuracy: None,
        test_accuracy: None,
        gap: None,
        signature: None,
        lambda,
        engine_version: ENGINE_VERSION.to_string(),
    }
}

fn run_unit(config: &RunConfig, unit: &UnitPlan) -> Result<UnitResult> {
    let train_data = spiral::generate_train(&unit.spec)?;
    let init_seed = seed::mix(&[config.root_seed, unit.net_id, stream::NET_INIT]);
    let train_seed = seed::mix(&[config.root_seed, unit.net_id, stream::NET_TRAIN]);
    let net = net::init(&unit.hparams, init_seed)?;
    let outcome = net::train(net, &train_data, config.train_steps, train_seed)?;

    if outcome.diverged {
        let records = config.lambdas().into_iter().map(|l| base_record(unit, l)).collect();
        return Ok(UnitResult { diverged: true, records, checkpoint: None });
    }

    let test_data = spiral::generate(&unit.spec, config.test_size, Purpose::Test)?;
    let train_acc = outcome.net.accuracy(&train_data)?;
    let test_acc = outcome.net.accuracy(&test_data)?;
    let mut records = Vec::new();
    for lambda in config.lambdas() {
        let sig = margin::extract_signature(&outcome.net, &train_data, lambda)?;
        let mut r = base_record(unit, lambda);
        r.diverged = false;
        r.train_accuracy = Some(train_acc);
        r.test_accuracy = Some(test_acc);
        r.gap = Some(train_acc - test_acc);
        r.signature = Some(sig.rows);
        records.push(r);
    }
    let checkpoint = config.checkpoint_weights.then(|| outcome.net.to_checkpoint());
    Ok(UnitResult { diverged: false, records, checkpoint })
}

/// Runs the sweep described by the config into `out_dir`.
pub fn run_sweep(config: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    let units = plan_units(config)?;
    run_sweep_with_units(config, &units, out_dir)
}

/// Runs an explicit unit list (used by tests that inject pathological
/// hyperparameters). Records land in one JSON Lines file per squash
/// constant; a manifest summarizes counts and failures.
pub fn run_sweep_with_units(
    config: &RunConfig,
    units: &[UnitPlan],
    out_dir: &Path,
) -> Result<RunManifest> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let execute = || -> Vec<(u64, Result<UnitResult>)> {
        units
            .par_iter()
            .map(|u| {
                // retry once; unit computation is deterministic, so this only
                // helps with transient environmental failures
                let result = run_unit(config, u).or_else(|_| run_unit(config, u));
                (u.net_id, result)
            })
            .collect()
    };
    let mut results = if config.workers == 0 {
        execute()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
        pool.install(execute)
    };
    results.sort_by_key(|(id, _)| *id);

    let mut failed = Vec::new();
    let mut diverged = 0usize;
    let mut completed = 0usize;
    let mut by_lambda: std::collections::BTreeMap<String, Vec<TrainedNetRecord>> =
        std::collections::BTreeMap::new();
    let mut checkpoints = Vec::new();
    for (net_id, result) in results {
        match result {
            Ok(unit_result) => {
                completed += 1;
                diverged += usize::from(unit_result.diverged);
                for r in unit_result.records {
                    by_lambda.entry(lambda_tag(r.lambda)).or_default().push(r);
                }
                if let Some(cp) = unit_result.checkpoint {
                    checkpoints.push((net_id, cp));
                }
            }
            Err(e) => failed.push(FailedUnit { net_id, error: e.to_string() }),
        }
    }

    let mut record_files = std::collections::BTreeMap::new();
    for (tag, records) in &by_lambda {
        let name = format!("records-lambda-{tag}.jsonl");
        write_records(&out_dir.join(&name), records)?;
        record_files.insert(tag.clone(), name);
    }
    if !checkpoints.is_empty() {
        let cp_dir = out_dir.join(CHECKPOINT_DIR);
        std::fs::create_dir_all(&cp_dir)?;
        for (net_id, cp) in &checkpoints {
            let text = serde_json::to_string(cp)?;
            std::fs::write(cp_dir.join(format!("net_{net_id}.json")), text)?;
        }
    }

    let manifest = RunManifest {
        engine_version: ENGINE_VERSION.to_string(),
        total_units: units.len(),
        completed,
        diverged,
        failed,
        lambdas: config.lambdas(),
        record_files,
        config: config.clone(),
        metrics: Default::default(),
    };
    manifest.save(out_dir)?;
    config.save(&out_dir.join(RUN_CONFIG_FILE))?;
    Ok(manifest)
}

/// Re-extracts signatures at a new squash constant from stored checkpoints,
/// writing a fresh records file and updating the manifest. Requires the
/// original sweep to have run with `checkpoint_weights = true`.
pub fn reextract(run_dir: &Path, lambda: f64) -> Result<RunManifest> {
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
    }
    let mut manifest = RunManifest::load(run_dir)?;
    let source_name = manifest
        .record_files
        .values()
        .next()
        .cloned()
        .ok_or_else(|| Error::config("run has no record files".to_string()))?;
    let source = super::read_records(&run_dir.join(&source_name))?;
    let mut out = Vec::with_capacity(source.len());
    for r in &source {
        let mut nr = r.clone();
        nr.lambda = lambda;
        if !r.diverged {
            let cp_path = run_dir.join(CHECKPOINT_DIR).join(format!("net_{}.json", r.net_id));
            let text = std::fs::read_to_string(&cp_path).map_err(|_| {
                Error::config(format!(
                    "no checkpoint for net {} ({}); rerun the sweep with checkpoint_weights = true",
                    r.net_id,
                    cp_path.display()
                ))
            })?;
            let cp: Checkpoint = serde_json::from_str(&text)?;
            let net = Network::from_checkpoint(&cp)?;
            let train_data = spiral::generate_train(&r.spec())?;
            let sig = margin::extract_signature(&net, &train_data, lambda)?;
            nr.signature = Some(sig.rows);
        }
        out.push(nr);
    }
    let name = records_file_name(lambda);
    write_records(&run_dir.join(&name), &out)?;
    manifest.record_files.insert(lambda_tag(lambda), name);
    if !manifest.lambdas.contains(&lambda) {
        manifest.lambdas.push(lambda);
        manifest.lambdas.sort_by(f64::total_cmp);
    }
    manifest.save(run_dir)?;
    Ok(manifest)
}
