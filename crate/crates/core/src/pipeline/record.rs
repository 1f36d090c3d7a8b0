//! The persisted record store: one JSON object per trained network, plus the
//! run manifest.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LabelMode;
use crate::ggp::GgpExample;
use crate::margin::SignatureMatrix;
use crate::net::{NetHparams, OptimizerKind};
use crate::spiral::SpiralSpec;

use super::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Persisted outcome of one training unit. Spec and hyperparameter fields
/// are flattened so the record store is self-describing; accuracies and the
/// signature are absent exactly when the run diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNetRecord {
    pub net_id: u64,
    pub variation_id: u32,
    pub loops: u32,
    pub noise_sigma: f64,
    pub num_train: u32,
    pub data_seed: u64,
    pub hparam_id: u32,
    pub layer_widths: Vec<u32>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub batch_norm: bool,
    pub dropout_rate: f64,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signature: Option<Vec<[f64; 5]>>,
    pub lambda: f64,
    pub engine_version: String,
}

impl TrainedNetRecord {
    pub fn spec(&self) -> SpiralSpec {
        SpiralSpec::new(self.loops, self.noise_sigma, self.num_train, self.data_seed)
    }

    pub fn hparams(&self) -> NetHparams {
        NetHparams {
            layer_widths: self.layer_widths.clone(),
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            batch_norm: self.batch_norm,
            dropout_rate: self.dropout_rate,
            hparam_id: self.hparam_id,
        }
    }

    pub fn signature_matrix(&self) -> Option<SignatureMatrix> {
        self.signature.as_ref().map(|rows| SignatureMatrix { rows: rows.clone(), lambda: self.lambda })
    }

    /// Structural invariants every persisted record satisfies.
    pub fn check(&self) -> Result<()> {
        if self.diverged != self.signature.is_none() {
            return Err(Error::Eval(format!(
                "net {}: diverged={} but signature {}",
                self.net_id,
                self.diverged,
                if self.signature.is_some() { "present" } else { "absent" }
            )));
        }
        if let (Some(tr), Some(te), Some(gap)) = (self.train_accuracy, self.test_accuracy, self.gap) {
            if (gap - (tr - te)).abs() > 1e-12 {
                return Err(Error::Eval(format!(
                    "net {}: gap {} != train - test = {}",
                    self.net_id,
                    gap,
                    tr - te
                )));
            }
        } else if !self.diverged {
            return Err(Error::Eval(format!("net {}: missing accuracies", self.net_id)));
        }
        Ok(())
    }
}

/// Writes one record per line.
pub fn write_records(path: &Path, records: &[TrainedNetRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<TrainedNetRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Builds predictor examples from the non-diverged records, labeling with
/// the gap or the test accuracy.
pub fn examples_from_records(records: &[TrainedNetRecord], label_mode: LabelMode) -> Vec<GgpExample> {
    records
        .iter()
        .filter(|r| !r.diverged)
        .filter_map(|r| {
            let signature = r.signature_matrix()?;
            let label = match label_mode {
                LabelMode::Gap => r.gap?,
                LabelMode::TestAccuracy => r.test_accuracy?,
            };
            Some(GgpExample {
                signature,
                label,
                net_id: r.net_id,
                variation_id: r.variation_id,
                data_seed: r.data_seed,
                hparam_id: r.hparam_id,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedUnit {
    pub net_id: u64,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub r2: f64,
    pub l1: f64,
    pub n: usize,
}

/// Summary of one sweep: counts, file map, resolved config, and any metrics
/// recorded by later evaluation passes. Deliberately timestamp-free so
/// reruns compare byte-for-byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine_version: String,
    pub total_units: usize,
    pub completed: usize,
    pub diverged: usize,
    pub failed: Vec<FailedUnit>,
    pub lambdas: Vec<f64>,
    /// Formatted squash constant -> records file name.
    pub record_files: BTreeMap<String, String>,
    pub config: RunConfig,
    #[serde(default)]
    pub metrics: BTreeMap<String, MetricEntry>,
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn record_file_for_lambda(&self, lambda: f64) -> Result<String> {
        self.record_files
            .get(&lambda_tag(lambda))
            .cloned()
            .ok_or_else(|| {
                Error::config(format!(
                    "no record file extracted at lambda {lambda}; available: {:?}",
                    self.record_files.keys().collect::<Vec<_>>()
                ))
            })
    }
}

/// Canonical formatting of a squash constant for file names and map keys.
pub fn lambda_tag(lambda: f64) -> String {
    format!("{lambda}")
}

pub fn records_file_name(lambda: f64) -> String {
    format!("records-lambda-{}.jsonl", lambda_tag(lambda))
}
