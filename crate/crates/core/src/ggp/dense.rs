//! Plain dense ReLU stack shared by the feed-forward predictor and the
//! recurrent predictor's head: Glorot-uniform kernels, zero biases, linear
//! final layer, trained with Adagrad on mean squared error.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::net::optim::OptState;

use super::GgpTrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseStack {
    pub layers: Vec<DenseLayer>,
}

impl DenseStack {
    pub(crate) fn glorot(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .map(|d| {
                let (in_dim, out_dim) = (d[0], d[1]);
                let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
                DenseLayer {
                    w: (0..in_dim * out_dim)
                        .map(|_| rng.random::<f64>() * 2.0 * bound - bound)
                        .collect(),
                    b: vec![0.0; out_dim],
                    in_dim,
                    out_dim,
                }
            })
            .collect();
        DenseStack { layers }
    }

    pub(crate) fn tensor_sizes(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect()
    }

    /// Activations per layer: index 0 is the input, the last entry the
    /// linear output; intermediate entries are post-ReLU.
    pub(crate) fn forward_tape(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = acts.last().expect("input pushed");
            let mut out = Vec::with_capacity(layer.out_dim);
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut acc = layer.b[o];
                for (wv, xv) in row.iter().zip(prev) {
                    acc += wv * xv;
                }
                out.push(if i < last { acc.max(0.0) } else { acc });
            }
            acts.push(out);
        }
        acts
    }

    /// Scalar prediction; the final layer must have one unit.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.forward_tape(x).last().expect("output layer")[0]
    }

    /// Accumulates gradients (layout: per layer `w`, `b`) and returns the
    /// gradient with respect to the input.
    pub(crate) fn backward(&self, acts: &[Vec<f64>], d_out: f64, grads: &mut [Vec<f64>]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut d = vec![d_out];
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x = &acts[i];
            let mut dz = d;
            if i < last {
                for (j, v) in dz.iter_mut().enumerate() {
                    if acts[i + 1][j] <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            let (gw, gb) = {
                let (a, b) = grads.split_at_mut(2 * i + 1);
                (&mut a[2 * i], &mut b[0])
            };
            let mut d_prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let dv = dz[o];
                gb[o] += dv;
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for k in 0..layer.in_dim {
                    grow[k] += dv * x[k];
                    d_prev[k] += row[k] * dv;
                }
            }
            d = d_prev;
        }
        d
    }

    pub(crate) fn apply_grads(&mut self, grads: &[Vec<f64>], opt: &mut OptState, lr: f64, base_idx: usize) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            opt.update(base_idx + 2 * i, lr, &mut layer.w, &grads[2 * i]);
            opt.update(base_idx + 2 * i + 1, lr, &mut layer.b, &grads[2 * i + 1]);
        }
    }
}

/// Trains a fresh stack on (feature, label) pairs with Adagrad and MSE,
/// sampling batches with replacement.
pub(crate) fn fit_mse(
    dims: &[usize],
    features: &[[f64; 5]],
    labels: &[f64],
    cfg: &GgpTrainConfig,
    rng: &mut ChaCha8Rng,
) -> DenseStack {
    debug_assert_eq!(features.len(), labels.len());
    let n = features.len();
    let mut stack = DenseStack::glorot(dims, rng);
    let mut opt = OptState::adagrad(&stack.tensor_sizes());
    let mut grads: Vec<Vec<f64>> = stack.tensor_sizes().into_iter().map(|s| vec![0.0; s]).collect();
    for _ in 0..cfg.steps {
        for g in &mut grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        for _ in 0..cfg.batch {
            let i = rng.random_range(0..n);
            let acts = stack.forward_tape(&features[i]);
            let pred = acts.last().expect("output")[0];
            let d = 2.0 * (pred - labels[i]) / cfg.batch as f64;
            stack.backward(&acts, d, &mut grads);
        }
        opt.begin_step();
        stack.apply_grads(&grads, &mut opt, cfg.learning_rate, 0);
    }
    stack
}
