//! End-to-end orchestration: hyperparameter sampling, the parallel
//! train/extract sweep, the JSON Lines record store, analysis export, and
//! table reporting.

mod analysis;
mod config;
mod record;
mod report;
mod sample;
mod sweep;

pub use analysis::{export_analysis, write_scatter_svgs, AnalysisKey};
pub use config::{GridConfig, RunConfig};
pub use record::{
    examples_from_records, lambda_tag, read_records, records_file_name, write_records, FailedUnit,
    MetricEntry, RunManifest, TrainedNetRecord, MANIFEST_FILE,
};
pub use report::{format_table, lambda_for, run_report, RunStore, CELLS};
pub use sample::{sample_hparams, sampling_space_size};
pub use sweep::{plan_units, reextract, run_sweep, run_sweep_with_units, UnitPlan, CHECKPOINT_DIR, RUN_CONFIG_FILE};
