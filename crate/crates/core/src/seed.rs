//! Deterministic seed derivation.
//!
//! Every stochastic stage (dataset noise, weight init, batch sampling,
//! dropout, GGP fitting) draws from a ChaCha stream whose seed is derived
//! from explicit integers via [`mix`]. Child seeds therefore depend only on
//! their inputs, never on scheduling order, which is what makes the parallel
//! sweep reproducible.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Stream tags keep independent uses of the same logical seed disjoint.
pub mod stream {
    pub const DATASET_TRAIN: u64 = 0x01;
    pub const DATASET_TEST: u64 = 0x02;
    pub const NET_INIT: u64 = 0x03;
    pub const NET_TRAIN: u64 = 0x04;
    pub const HPARAM_SAMPLE: u64 = 0x05;
    pub const GGP_FIT: u64 = 0x06;
}

/// SplitMix64 finalization step.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds the parts into a single 64-bit seed with SplitMix64. Order matters:
/// `mix(&[a, b]) != mix(&[b, a])` in general.
pub fn mix(parts: &[u64]) -> u64 {
    let mut state = 0x6A09_E667_F3BC_C908u64;
    for &p in parts {
        state = splitmix(state ^ p);
    }
    state
}

/// A ChaCha8 stream seeded from the mixed parts.
pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}
