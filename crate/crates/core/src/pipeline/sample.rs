//! Hyperparameter sampling over the published grid.

use rand::Rng;
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::net::hparams::{
    BATCH_SIZE_CHOICES, DEPTH_CHOICES, DROPOUT_CHOICES, LEARNING_RATE_CHOICES, WIDTH_CHOICES,
};
use crate::net::{NetHparams, OptimizerKind};
use crate::seed::{self, stream};

/// Cardinality of the sampling grid: widths vary independently per layer, so
/// architectures alone contribute `sum_L 3^L = 120`, times 2 optimizers,
/// 3 learning rates, 3 batch sizes, 2 batch-norm settings, and 3 dropout
/// rates.
pub fn sampling_space_size() -> usize {
    let architectures: usize = DEPTH_CHOICES
        .iter()
        .map(|&depth| WIDTH_CHOICES.len().pow(depth as u32))
        .sum();
    architectures
        * 2
        * LEARNING_RATE_CHOICES.len()
        * BATCH_SIZE_CHOICES.len()
        * 2
        * DROPOUT_CHOICES.len()
}

/// Draws `count` distinct configurations uniformly from the grid;
/// duplicates are rejected and redrawn. Deterministic in the seed.
pub fn sample_hparams(count: u32, sample_seed: u64) -> Result<Vec<NetHparams>> {
    if count == 0 {
        return Err(Error::domain("must sample at least one configuration".to_string()));
    }
    if count as usize > sampling_space_size() {
        return Err(Error::domain(format!(
            "cannot sample {count} distinct configurations from a grid of {}",
            sampling_space_size()
        )));
    }
    let mut rng = seed::rng(&[sample_seed, stream::HPARAM_SAMPLE]);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count as usize);
    while out.len() < count as usize {
        let depth = DEPTH_CHOICES[rng.random_range(0..DEPTH_CHOICES.len())];
        let layer_widths =
            (0..depth).map(|_| WIDTH_CHOICES[rng.random_range(0..WIDTH_CHOICES.len())]).collect();
        let h = NetHparams {
            layer_widths,
            optimizer: if rng.random::<bool>() { OptimizerKind::Adam } else { OptimizerKind::Sgd },
            learning_rate: LEARNING_RATE_CHOICES[rng.random_range(0..LEARNING_RATE_CHOICES.len())],
            batch_size: BATCH_SIZE_CHOICES[rng.random_range(0..BATCH_SIZE_CHOICES.len())],
            batch_norm: rng.random::<bool>(),
            dropout_rate: DROPOUT_CHOICES[rng.random_range(0..DROPOUT_CHOICES.len())],
            hparam_id: out.len() as u32,
        };
        if seen.insert(h.config_key()) {
            out.push(h);
        }
    }
    Ok(out)
}
