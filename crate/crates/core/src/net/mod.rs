//! Small fully-connected binary classifiers with exact, hand-rolled
//! gradients.
//!
//! A [`Network`] maps a 2-d input to a single scalar logit; the predicted
//! class is the sign of the logit. Hidden layers compute
//! affine -> (batch norm) -> ReLU -> (dropout, training mode only); the
//! output layer is affine with no activation. All arithmetic is f64; the
//! divergence rule still uses the float32 limit so runs that blow past
//! single precision are discarded.
//!
//! Besides training, the module exposes the gradient of the output with
//! respect to any layer's activations ([`Network::grad_wrt_activation`]),
//! which is what margin extraction consumes.

mod batch;
mod checkpoint;
pub mod hparams;
pub mod optim;
mod train;

pub use batch::{sigmoid_ce_into, BatchTape, LayerTape, NetGrads};
pub use checkpoint::{Checkpoint, TensorBlob};
pub use hparams::{NetHparams, OptimizerKind};
pub use train::{train, TrainOutcome};

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spiral::Dataset;

/// Input dimension of every classifier in the population.
pub const IN_DIM: usize = 2;

/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-3;

/// Moving-average momentum for batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.99;

/// Divergence threshold: values beyond the float32 range count as diverged
/// even though f64 can still represent them.
pub const F32_LIMIT: f64 = f32::MAX as f64;

pub(crate) fn beyond_f32(x: f64) -> bool {
    !x.is_finite() || x.abs() > F32_LIMIT
}

/// Forward-pass mode. Training uses batch statistics for batch norm and
/// applies dropout; inference uses moving statistics and no dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Training,
    Inference,
}

/// Dense affine map, weights row-major `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    fn glorot(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.random::<f64>() * 2.0 * bound - bound)
            .collect();
        Affine { w, b: vec![0.0; out_dim], in_dim, out_dim }
    }

    /// y = W x + b for a single sample.
    fn apply(&self, x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            y.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub moving_mean: Vec<f64>,
    pub moving_var: Vec<f64>,
}

impl BatchNorm {
    fn identity(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            moving_mean: vec![0.0; dim],
            moving_var: vec![1.0; dim],
        }
    }

    /// Per-unit slope of the inference-mode transform, `gamma / sqrt(v + eps)`.
    pub fn inference_slope(&self, j: usize) -> f64 {
        self.gamma[j] / (self.moving_var[j] + BN_EPS).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub affine: Affine,
    pub bn: Option<BatchNorm>,
}

/// A classifier plus the hyperparameters that shaped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub hparams: NetHparams,
    pub hidden: Vec<HiddenLayer>,
    pub output: Affine,
}

/// Activations recorded by a forward pass: `layers[0]` is the raw input,
/// `layers[l]` the post-activation of hidden layer `l`, and the final entry
/// the scalar output. Length is always depth + 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub layers: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// The scalar logit.
    pub fn output(&self) -> f64 {
        self.layers.last().expect("trace has output layer")[0]
    }
}

/// Glorot-uniform kernels, zero biases, identity batch-norm parameters.
pub fn init(hparams: &NetHparams, init_seed: u64) -> Result<Network> {
    hparams.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut hidden = Vec::with_capacity(hparams.depth());
    let mut in_dim = IN_DIM;
    for &width in &hparams.layer_widths {
        let width = width as usize;
        let affine = Affine::glorot(in_dim, width, &mut rng);
        let bn = hparams.batch_norm.then(|| BatchNorm::identity(width));
        hidden.push(HiddenLayer { affine, bn });
        in_dim = width;
    }
    let output = Affine::glorot(in_dim, 1, &mut rng);
    Ok(Network { hparams: hparams.clone(), hidden, output })
}

impl Network {
    /// Depth `L` (number of hidden layers).
    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// True when any parameter is non-finite or beyond the float32 range.
    pub fn divergence_flagged(&self) -> bool {
        self.tensor_views().into_iter().flatten().any(|&x| beyond_f32(x))
    }

    fn ensure_usable(&self) -> Result<()> {
        if self.divergence_flagged() {
            Err(Error::Diverged("network parameters exceed float32 limits".to_string()))
        } else {
            Ok(())
        }
    }

    /// Trainable tensors in canonical order: per hidden layer `w`, `b`, and
    /// (with batch norm) `gamma`, `beta`; then the output `w`, `b`.
    pub fn tensor_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for hl in &self.hidden {
            sizes.push(hl.affine.w.len());
            sizes.push(hl.affine.b.len());
            if let Some(bn) = &hl.bn {
                sizes.push(bn.gamma.len());
                sizes.push(bn.beta.len());
            }
        }
        sizes.push(self.output.w.len());
        sizes.push(self.output.b.len());
        sizes
    }

    pub(crate) fn tensor_views(&self) -> Vec<&[f64]> {
        let mut views: Vec<&[f64]> = Vec::new();
        for hl in &self.hidden {
            views.push(&hl.affine.w);
            views.push(&hl.affine.b);
            if let Some(bn) = &hl.bn {
                views.push(&bn.gamma);
                views.push(&bn.beta);
            }
        }
        views.push(&self.output.w);
        views.push(&self.output.b);
        views
    }

    /// Visits trainable tensors mutably in canonical order.
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(usize, &mut Vec<f64>)) {
        let mut idx = 0;
        for hl in &mut self.hidden {
            f(idx, &mut hl.affine.w);
            idx += 1;
            f(idx, &mut hl.affine.b);
            idx += 1;
            if let Some(bn) = &mut hl.bn {
                f(idx, &mut bn.gamma);
                idx += 1;
                f(idx, &mut bn.beta);
                idx += 1;
            }
        }
        f(idx, &mut self.output.w);
        f(idx + 1, &mut self.output.b);
    }

    /// Single-input forward pass recording every layer's activations.
    ///
    /// Training mode normalizes with the statistics of this one-point batch
    /// and draws dropout masks from `rng` (required when the dropout rate is
    /// nonzero); moving statistics are never updated here.
    pub fn forward(
        &self,
        input: [f64; 2],
        mode: Mode,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardTrace> {
        self.ensure_usable()?;
        if !input.iter().all(|x| x.is_finite()) {
            return Err(Error::domain("input must be finite".to_string()));
        }
        let dropout = self.hparams.dropout_rate;
        if mode == Mode::Training && dropout > 0.0 && rng.is_none() {
            return Err(Error::config(
                "training-mode forward with dropout requires an rng".to_string(),
            ));
        }
        let mut layers = Vec::with_capacity(self.depth() + 2);
        layers.push(input.to_vec());
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for hl in &self.hidden {
            hl.affine.apply(&cur, &mut next);
            if let Some(bn) = &hl.bn {
                match mode {
                    Mode::Inference => {
                        for (j, z) in next.iter_mut().enumerate() {
                            *z = bn.gamma[j] * (*z - bn.moving_mean[j])
                                / (bn.moving_var[j] + BN_EPS).sqrt()
                                + bn.beta[j];
                        }
                    }
                    Mode::Training => {
                        // One-point batch: mean is the value itself, variance 0.
                        for (j, z) in next.iter_mut().enumerate() {
                            *z = bn.beta[j];
                        }
                    }
                }
            }
            for z in next.iter_mut() {
                *z = z.max(0.0);
            }
            if mode == Mode::Training && dropout > 0.0 {
                use rand::Rng;
                let rng = rng.as_mut().expect("checked above");
                let keep = 1.0 - dropout;
                for z in next.iter_mut() {
                    if rng.random::<f64>() < keep {
                        *z /= keep;
                    } else {
                        *z = 0.0;
                    }
                }
            }
            layers.push(next.clone());
            std::mem::swap(&mut cur, &mut next);
        }
        let mut out = Vec::new();
        self.output.apply(&cur, &mut out);
        layers.push(out);
        Ok(ForwardTrace { mode, layers })
    }

    /// Inference-mode forward.
    pub fn forward_inference(&self, input: [f64; 2]) -> Result<ForwardTrace> {
        self.forward(input, Mode::Inference, None)
    }

    /// Resumes the inference-mode forward pass from layer `layer`'s
    /// post-activation value and returns the scalar output. `layer` = 0 feeds
    /// the whole network; `layer` = depth + 1 is the output itself.
    pub fn forward_from(&self, layer: usize, activation: &[f64]) -> Result<f64> {
        let depth = self.depth();
        if layer > depth + 1 {
            return Err(Error::domain(format!(
                "layer {layer} out of range 0..={}",
                depth + 1
            )));
        }
        if layer == depth + 1 {
            return Ok(activation[0]);
        }
        let mut cur = activation.to_vec();
        let mut next = Vec::new();
        for hl in &self.hidden[layer..] {
            if hl.affine.in_dim != cur.len() {
                return Err(Error::domain(format!(
                    "activation has dimension {}, layer expects {}",
                    cur.len(),
                    hl.affine.in_dim
                )));
            }
            hl.affine.apply(&cur, &mut next);
            if let Some(bn) = &hl.bn {
                for (j, z) in next.iter_mut().enumerate() {
                    *z = bn.gamma[j] * (*z - bn.moving_mean[j])
                        / (bn.moving_var[j] + BN_EPS).sqrt()
                        + bn.beta[j];
                }
            }
            for z in next.iter_mut() {
                *z = z.max(0.0);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let mut out = Vec::new();
        self.output.apply(&cur, &mut out);
        Ok(out[0])
    }

    /// Gradient of the scalar output with respect to the layer-`layer`
    /// activation vector of `trace`, holding all parameters fixed. For the
    /// output layer this is the scalar 1.
    pub fn grad_wrt_activation(&self, trace: &ForwardTrace, layer: usize) -> Result<Vec<f64>> {
        let depth = self.depth();
        if layer > depth + 1 {
            return Err(Error::domain(format!(
                "layer {layer} out of range 0..={}",
                depth + 1
            )));
        }
        if trace.mode != Mode::Inference {
            return Err(Error::domain(
                "activation gradients require an inference-mode trace".to_string(),
            ));
        }
        if trace.layers.len() != depth + 2 {
            return Err(Error::domain(format!(
                "trace has {} layers, network produces {}",
                trace.layers.len(),
                depth + 2
            )));
        }
        if layer == depth + 1 {
            return Ok(vec![1.0]);
        }
        // d output / d (last hidden activation) is the output kernel.
        let mut g = self.output.w.clone();
        for i in (layer..depth).rev() {
            let hl = &self.hidden[i];
            let post = &trace.layers[i + 1];
            let mut dz = vec![0.0; hl.affine.out_dim];
            for j in 0..hl.affine.out_dim {
                if post[j] > 0.0 {
                    let mut v = g[j];
                    if let Some(bn) = &hl.bn {
                        v *= bn.inference_slope(j);
                    }
                    dz[j] = v;
                }
            }
            let mut prev = vec![0.0; hl.affine.in_dim];
            for j in 0..hl.affine.out_dim {
                let row = &hl.affine.w[j * hl.affine.in_dim..(j + 1) * hl.affine.in_dim];
                for (pk, wk) in prev.iter_mut().zip(row) {
                    *pk += wk * dz[j];
                }
            }
            g = prev;
        }
        Ok(g)
    }

    /// Fraction of points whose predicted sign matches the label, inference
    /// mode. A zero logit counts as incorrect.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        self.ensure_usable()?;
        if data.points.is_empty() {
            return Err(Error::domain("accuracy requires a nonempty dataset".to_string()));
        }
        let mut cur = Vec::new();
        let mut next = Vec::new();
        let mut correct = 0usize;
        for p in &data.points {
            cur.clear();
            cur.extend_from_slice(&[p.x, p.y]);
            for hl in &self.hidden {
                hl.affine.apply(&cur, &mut next);
                if let Some(bn) = &hl.bn {
                    for (j, z) in next.iter_mut().enumerate() {
                        *z = bn.gamma[j] * (*z - bn.moving_mean[j])
                            / (bn.moving_var[j] + BN_EPS).sqrt()
                            + bn.beta[j];
                    }
                }
                for z in next.iter_mut() {
                    *z = z.max(0.0);
                }
                std::mem::swap(&mut cur, &mut next);
            }
            self.output.apply(&cur, &mut next);
            let f = next[0];
            if (f > 0.0 && p.label > 0) || (f < 0.0 && p.label < 0) {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.points.len() as f64)
    }
}
