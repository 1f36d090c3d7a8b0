//! Sampled architecture/optimizer configurations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WIDTH_CHOICES: [u32; 3] = [4, 8, 16];
pub const DEPTH_CHOICES: [usize; 4] = [1, 2, 3, 4];
pub const LEARNING_RATE_CHOICES: [f64; 3] = [0.1, 0.01, 0.001];
pub const BATCH_SIZE_CHOICES: [u32; 3] = [32, 64, 128];
pub const DROPOUT_CHOICES: [f64; 3] = [0.0, 0.25, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// One sampled classifier configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetHparams {
    /// Hidden-layer widths, first to last. Length is the depth `L`.
    pub layer_widths: Vec<u32>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Requested mini-batch size; clamped to the dataset size at train time.
    pub batch_size: u32,
    pub batch_norm: bool,
    pub dropout_rate: f64,
    pub hparam_id: u32,
}

impl NetHparams {
    /// Depth `L` (number of hidden layers).
    pub fn depth(&self) -> usize {
        self.layer_widths.len()
    }

    /// Loose engine-level validation; permits values outside the sampling
    /// grid (custom widths, injected extreme learning rates).
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::domain("layer widths must be positive".to_string()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::domain(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::domain(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Strict membership in the sampling grid (depth 1-4, widths in {4,8,16},
    /// and so on). Sampled configurations always satisfy this.
    pub fn in_sampling_grid(&self) -> bool {
        DEPTH_CHOICES.contains(&self.depth())
            && self.layer_widths.iter().all(|w| WIDTH_CHOICES.contains(w))
            && LEARNING_RATE_CHOICES.contains(&self.learning_rate)
            && BATCH_SIZE_CHOICES.contains(&self.batch_size)
            && DROPOUT_CHOICES.contains(&self.dropout_rate)
    }

    /// Identity of the configuration ignoring `hparam_id`, used to reject
    /// duplicate draws.
    pub fn config_key(&self) -> (Vec<u32>, OptimizerKind, u64, u32, bool, u64) {
        (
            self.layer_widths.clone(),
            self.optimizer,
            self.learning_rate.to_bits(),
            self.batch_size,
            self.batch_norm,
            self.dropout_rate.to_bits(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> NetHparams {
        NetHparams {
            layer_widths: vec![8, 16],
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.1,
            batch_size: 32,
            batch_norm: false,
            dropout_rate: 0.25,
            hparam_id: 0,
        }
    }

    #[test]
    fn validate_accepts_grid_and_custom_rates() {
        base().validate().unwrap();
        let mut custom = base();
        custom.learning_rate = 1e6; // divergence-injection case
        custom.validate().unwrap();
        assert!(!custom.in_sampling_grid());
    }

    #[test]
    fn validate_rejects_degenerate_values() {
        let mut h = base();
        h.layer_widths = vec![0];
        assert!(h.validate().is_err());
        let mut h = base();
        h.dropout_rate = 1.0;
        assert!(h.validate().is_err());
        let mut h = base();
        h.batch_size = 0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn config_key_ignores_id() {
        let mut a = base();
        let mut b = base();
        a.hparam_id = 1;
        b.hparam_id = 2;
        assert_eq!(a.config_key(), b.config_key());
    }
}
