//! Two-arm spiral classification tasks.
//!
//! A [`SpiralSpec`] is a complete recipe for one dataset: number of loops
//! `k`, per-coordinate Gaussian noise `sigma`, training-set size `m`, and a
//! generation seed. Identical specs generate bit-identical datasets, so the
//! pipeline only ever persists specs, never points.
//!
//! The blue arm follows `theta = 2*pi*k*u`, `r = u` for `u` in `[0, 1]`,
//! which winds exactly `k` loops inside the closed unit disk; the red arm is
//! the blue arm rotated by pi about the origin. Blue maps to label `+1`, red
//! to `-1`.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed offset separating the test stream from the train stream.
const TEST_SEED_OFFSET: u64 = 1 << 31;

/// Full recipe for one dataset variation plus replica seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpiralSpec {
    /// Number of spiral loops `k`.
    pub loops: u32,
    /// Standard deviation of the Gaussian noise added to each coordinate.
    pub noise_sigma: f64,
    /// Training-set size `m`.
    pub num_train: u32,
    /// Replica seed for the pseudo-random stream.
    pub data_seed: u64,
}

impl SpiralSpec {
    pub fn new(loops: u32, noise_sigma: f64, num_train: u32, data_seed: u64) -> Self {
        Self { loops, noise_sigma, num_train, data_seed }
    }

    fn validate(&self) -> Result<()> {
        if self.loops < 1 {
            return Err(Error::domain(format!("loops must be >= 1, got {}", self.loops)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::domain(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.num_train < 1 {
            return Err(Error::domain("num_train must be >= 1".to_string()));
        }
        Ok(())
    }

    /// The (m, k, sigma) triple identifying the dataset variation, ignoring
    /// the replica seed.
    pub fn variation(&self) -> (u32, u32, u64) {
        (self.num_train, self.loops, sigma_key(self.noise_sigma))
    }
}

/// Noise levels are compared through a fixed-point key so variations can be
/// grouped and sorted without f64 ordering pitfalls.
pub fn sigma_key(sigma: f64) -> u64 {
    (sigma * 1e6).round() as u64
}

/// Which spiral arm a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Blue,
    Red,
}

/// Purpose of a generated set; selects a disjoint pseudo-random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: f64,
    pub y: f64,
    /// Class label, `+1` (blue) or `-1` (red).
    pub label: i8,
}

/// An ordered, immutable list of labeled points plus the spec that made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: SpiralSpec,
    pub purpose: Purpose,
    pub points: Vec<LabeledPoint>,
}

/// Noiseless point on one arm at curve parameter `u`.
///
/// Blue: `theta = 2*pi*k*u`, `r = u`; red is the blue point rotated by pi.
pub fn arm_point(u: f64, arm: Arm, loops: u32) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::domain(format!("u must lie in [0, 1], got {u}")));
    }
    if loops < 1 {
        return Err(Error::domain(format!("loops must be >= 1, got {loops}")));
    }
    let theta = 2.0 * std::f64::consts::PI * loops as f64 * u;
    let (x, y) = (u * theta.cos(), u * theta.sin());
    Ok(match arm {
        Arm::Blue => (x, y),
        Arm::Red => (-x, -y),
    })
}

/// Generates `n` labeled points, alternating blue (+1) and red (-1).
///
/// The stream is a pure function of `(spec, purpose)`: curve positions are
/// uniform in `[0, 1)` and i.i.d. `N(0, sigma^2)` noise is added to each
/// coordinate. The test stream is offset so train and test draws never
/// overlap.
pub fn generate(spec: &SpiralSpec, n: u32, purpose: Purpose) -> Result<Dataset> {
    spec.validate()?;
    if n < 1 {
        return Err(Error::domain("cannot generate an empty dataset".to_string()));
    }
    let seed = match purpose {
        Purpose::Train => spec.data_seed,
        Purpose::Test => spec.data_seed.wrapping_add(TEST_SEED_OFFSET),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n as usize);
    for i in 0..n {
        let arm = if i % 2 == 0 { Arm::Blue } else { Arm::Red };
        let u: f64 = rng.random();
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        let (x, y) = arm_point(u, arm, spec.loops)?;
        points.push(LabeledPoint {
            x: x + spec.noise_sigma * nx,
            y: y + spec.noise_sigma * ny,
            label: if arm == Arm::Blue { 1 } else { -1 },
        });
    }
    Ok(Dataset { spec: *spec, purpose, points })
}

/// Convenience: the training set of exactly `spec.num_train` points.
pub fn generate_train(spec: &SpiralSpec) -> Result<Dataset> {
    generate(spec, spec.num_train, Purpose::Train)
}

/// The paper-preset grid: m in {50,100,200} x k in {1,2,3} x
/// sigma in {0, 0.05, 0.15} x seeds {1..5}; 135 specs, 27 variations.
pub fn paper_preset_specs() -> Vec<SpiralSpec> {
    let mut specs = Vec::with_capacity(135);
    for &m in &[50u32, 100, 200] {
        for &k in &[1u32, 2, 3] {
            for &sigma in &[0.0f64, 0.05, 0.15] {
                for seed in 1..=5u64 {
                    specs.push(SpiralSpec::new(k, sigma, m, seed));
                }
            }
        }
    }
    specs
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    spec: SpiralSpec,
    purpose: Purpose,
    count: usize,
}

impl Dataset {
    /// Writes JSON Lines: a header carrying the spec, then one point object
    /// per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = JsonlHeader { spec: self.spec, purpose: self.purpose, count: self.points.len() };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for p in &self.points {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Parse("dataset file is empty".to_string()))??;
        let header: JsonlHeader = serde_json::from_str(&header_line)?;
        let mut points = Vec::with_capacity(header.count);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let p: LabeledPoint = serde_json::from_str(&line)?;
            if p.label != 1 && p.label != -1 {
                return Err(Error::Parse(format!("label must be +1 or -1, got {}", p.label)));
            }
            points.push(p);
        }
        if points.len() != header.count {
            return Err(Error::Parse(format!(
                "header count {} does not match {} points",
                header.count,
                points.len()
            )));
        }
        Ok(Dataset { spec: header.spec, purpose: header.purpose, points })
    }
}
