//! Run configuration: dataset grid, sampling sizes, training lengths, squash
//! constants, and seeds. A config plus the engine version fully determines
//! every artifact byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggp::{LAMBDA_DATASET_DEPENDENT, LAMBDA_DATASET_INDEPENDENT};
use crate::spiral::{sigma_key, SpiralSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub loops: Vec<u32>,
    pub noise_sigma: Vec<f64>,
    pub num_train: Vec<u32>,
    pub data_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Informational tag: "desk", "paper", or "custom".
    pub preset: String,
    pub root_seed: u64,
    /// Worker threads for the sweep; 0 means all available cores.
    pub workers: usize,
    pub hparam_count: u32,
    pub hparam_seed: u64,
    pub train_steps: usize,
    pub test_size: u32,
    /// Squash constant for one-model-per-dataset feature extraction.
    pub lambda_dataset_dependent: f64,
    /// Squash constant for single-model feature extraction.
    pub lambda_dataset_independent: f64,
    /// Persist network weights so signatures can be re-extracted later.
    pub checkpoint_weights: bool,
    pub grid: GridConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Workstation-scale run: 12 dataset variations x 3 seeds x 20 sampled
    /// configurations = 720 training units at 10^4 steps.
    pub fn desk() -> Self {
        RunConfig {
            preset: "desk".to_string(),
            root_seed: 17,
            workers: 0,
            hparam_count: 20,
            hparam_seed: 7,
            train_steps: 10_000,
            test_size: 10_000,
            lambda_dataset_dependent: LAMBDA_DATASET_DEPENDENT,
            lambda_dataset_independent: LAMBDA_DATASET_INDEPENDENT,
            checkpoint_weights: false,
            grid: GridConfig {
                loops: vec![1, 2],
                noise_sigma: vec![0.0, 0.05, 0.15],
                num_train: vec![100, 200],
                data_seeds: vec![1, 2, 3],
            },
        }
    }

    /// Published-scale run: 27 variations x 5 seeds x 100 configurations =
    /// 13,500 units at 10^6 steps with 10^6-point test sets. Days of compute;
    /// not part of any automated check.
    pub fn paper() -> Self {
        RunConfig {
            preset: "paper".to_string(),
            hparam_count: 100,
            train_steps: 1_000_000,
            test_size: 1_000_000,
            grid: GridConfig {
                loops: vec![1, 2, 3],
                noise_sigma: vec![0.0, 0.05, 0.15],
                num_train: vec![50, 100, 200],
                data_seeds: vec![1, 2, 3, 4, 5],
            },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.loops.is_empty()
            || self.grid.noise_sigma.is_empty()
            || self.grid.num_train.is_empty()
            || self.grid.data_seeds.is_empty()
        {
            return Err(Error::config("the dataset grid must be nonempty".to_string()));
        }
        if self.hparam_count == 0 {
            return Err(Error::config("hparam_count must be >= 1".to_string()));
        }
        if self.train_steps == 0 || self.test_size == 0 {
            return Err(Error::config("train_steps and test_size must be >= 1".to_string()));
        }
        if !(self.lambda_dataset_dependent > 0.0) || !(self.lambda_dataset_independent > 0.0) {
            return Err(Error::config("squash constants must be positive".to_string()));
        }
        if self.grid.noise_sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("noise sigma must be nonnegative".to_string()));
        }
        Ok(())
    }

    /// Distinct (m, k, sigma) variations in canonical sorted order; the
    /// index in this list is the variation id.
    pub fn variations(&self) -> Vec<(u32, u32, f64)> {
        let mut v: Vec<(u32, u32, f64)> = Vec::new();
        for &m in &self.grid.num_train {
            for &k in &self.grid.loops {
                for &sigma in &self.grid.noise_sigma {
                    v.push((m, k, sigma));
                }
            }
        }
        v.sort_by_key(|&(m, k, s)| (m, k, sigma_key(s)));
        v.dedup_by_key(|&mut (m, k, s)| (m, k, sigma_key(s)));
        v
    }

    /// All dataset specs: every variation times every seed, in variation
    /// order.
    pub fn dataset_specs(&self) -> Vec<(u32, SpiralSpec)> {
        let mut seeds = self.grid.data_seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        let mut specs = Vec::new();
        for (vid, &(m, k, sigma)) in self.variations().iter().enumerate() {
            for &seed in &seeds {
                specs.push((vid as u32, SpiralSpec::new(k, sigma, m, seed)));
            }
        }
        specs
    }

    /// Distinct squash constants to extract signatures at.
    pub fn lambdas(&self) -> Vec<f64> {
        let mut ls = vec![self.lambda_dataset_dependent, self.lambda_dataset_independent];
        ls.sort_by(f64::total_cmp);
        ls.dedup();
        ls
    }

    /// Total training units in the sweep.
    pub fn unit_count(&self) -> usize {
        self.dataset_specs().len() * self.hparam_count as usize
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("config encode: {e}")))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}
