//! Recurrent gap predictor: an Elman cell with tanh activation walks the
//! signature rows (input layer first), and its final hidden state feeds a
//! dense ReLU head. Gradients flow by backpropagation through time over the
//! whole (short) sequence; batches mix sequence lengths freely because each
//! example is unrolled on its own.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::net::optim::OptState;
use crate::seed::{self, stream};

use super::dense::DenseStack;
use super::{GgpExample, GgpTrainConfig, GGP_HIDDEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnCell {
    /// Input kernel, `hidden x in_dim` row-major.
    pub w_in: Vec<f64>,
    /// Recurrent kernel, `hidden x hidden` row-major.
    pub w_rec: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub hidden: usize,
}

impl RnnCell {
    /// Glorot-uniform input kernel, orthogonal recurrent kernel, zero bias.
    fn init(in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_dim + hidden) as f64).sqrt();
        let w_in = (0..hidden * in_dim)
            .map(|_| rng.random::<f64>() * 2.0 * bound - bound)
            .collect();
        let gauss = DMatrix::from_fn(hidden, hidden, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = gauss.qr();
        let r = qr.r();
        let mut q = qr.q();
        // Fix signs so the decomposition is unique (and well spread).
        for j in 0..hidden {
            if r[(j, j)] < 0.0 {
                for i in 0..hidden {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        let w_rec = (0..hidden * hidden).map(|k| q[(k / hidden, k % hidden)]).collect();
        RnnCell { w_in, w_rec, b: vec![0.0; hidden], in_dim, hidden }
    }

    /// Hidden states h_0 (zeros) through h_T.
    fn forward(&self, rows: &[[f64; 5]]) -> Vec<Vec<f64>> {
        let mut hs = Vec::with_capacity(rows.len() + 1);
        hs.push(vec![0.0; self.hidden]);
        for row in rows {
            let prev = hs.last().expect("h0 pushed");
            let mut h = Vec::with_capacity(self.hidden);
            for j in 0..self.hidden {
                let mut acc = self.b[j];
                let wi = &self.w_in[j * self.in_dim..(j + 1) * self.in_dim];
                for (w, x) in wi.iter().zip(row.iter()) {
                    acc += w * x;
                }
                let wr = &self.w_rec[j * self.hidden..(j + 1) * self.hidden];
                for (w, hp) in wr.iter().zip(prev) {
                    acc += w * hp;
                }
                h.push(acc.tanh());
            }
            hs.push(h);
        }
        hs
    }

    /// Backpropagation through time from the gradient at the final hidden
    /// state. Gradient layout: `grads[0]` = w_in, `grads[1]` = w_rec,
    /// `grads[2]` = b.
    fn backward(&self, rows: &[[f64; 5]], hs: &[Vec<f64>], d_h_final: &[f64], grads: &mut [Vec<f64>]) {
        let mut d_h = d_h_final.to_vec();
        let mut d_pre = vec![0.0; self.hidden];
        for t in (1..hs.len()).rev() {
            let h = &hs[t];
            let h_prev = &hs[t - 1];
            let x = &rows[t - 1];
            for j in 0..self.hidden {
                d_pre[j] = d_h[j] * (1.0 - h[j] * h[j]);
            }
            let mut d_h_prev = vec![0.0; self.hidden];
            for j in 0..self.hidden {
                let dv = d_pre[j];
                grads[2][j] += dv;
                let g_in = &mut grads[0][j * self.in_dim..(j + 1) * self.in_dim];
                for (g, xv) in g_in.iter_mut().zip(x.iter()) {
                    *g += dv * xv;
                }
                let g_rec = &mut grads[1][j * self.hidden..(j + 1) * self.hidden];
                let w_rec = &self.w_rec[j * self.hidden..(j + 1) * self.hidden];
                for k in 0..self.hidden {
                    g_rec[k] += dv * h_prev[k];
                    d_h_prev[k] += w_rec[k] * dv;
                }
            }
            d_h = d_h_prev;
        }
    }

    fn tensor_sizes(&self) -> [usize; 3] {
        [self.w_in.len(), self.w_rec.len(), self.b.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub cell: RnnCell,
    pub head: DenseStack,
    pub lambda: f64,
    pub fit_seed: u64,
}

impl RnnModel {
    pub(crate) fn init(lambda: f64, fit_seed: u64, rng: &mut ChaCha8Rng) -> Self {
        let cell = RnnCell::init(5, GGP_HIDDEN, rng);
        let head = DenseStack::glorot(&[GGP_HIDDEN, GGP_HIDDEN, GGP_HIDDEN, GGP_HIDDEN, 1], rng);
        RnnModel { cell, head, lambda, fit_seed }
    }

    pub fn predict_rows(&self, rows: &[[f64; 5]]) -> f64 {
        let hs = self.cell.forward(rows);
        self.head.predict(hs.last().expect("nonempty"))
    }

    fn tensor_sizes(&self) -> Vec<usize> {
        let mut sizes = self.cell.tensor_sizes().to_vec();
        sizes.extend(self.head.tensor_sizes());
        sizes
    }

    /// Accumulates gradients for one example; layout is cell tensors then
    /// head tensors.
    fn accumulate_example(&self, rows: &[[f64; 5]], d_pred: f64, grads: &mut [Vec<f64>]) {
        let hs = self.cell.forward(rows);
        let acts = self.head.forward_tape(hs.last().expect("nonempty"));
        let (cell_grads, head_grads) = grads.split_at_mut(3);
        let d_h = self.head.backward(&acts, d_pred, head_grads);
        self.cell.backward(rows, &hs, &d_h, cell_grads);
    }
}

pub(crate) fn fit(examples: &[GgpExample], lambda: f64, cfg: &GgpTrainConfig) -> Result<RnnModel> {
    let mut rng = seed::rng(&[cfg.fit_seed, stream::GGP_FIT]);
    let mut model = RnnModel::init(lambda, cfg.fit_seed, &mut rng);
    let mut opt = OptState::adagrad(&model.tensor_sizes());
    let mut grads: Vec<Vec<f64>> =
        model.tensor_sizes().into_iter().map(|s| vec![0.0; s]).collect();
    let n = examples.len();
    for _ in 0..cfg.steps {
        for g in &mut grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        for _ in 0..cfg.batch {
            let ex = &examples[rng.random_range(0..n)];
            let pred = model.predict_rows(&ex.signature.rows);
            let d = 2.0 * (pred - ex.label) / cfg.batch as f64;
            model.accumulate_example(&ex.signature.rows, d, &mut grads);
        }
        opt.begin_step();
        opt.update(0, cfg.learning_rate, &mut model.cell.w_in, &grads[0]);
        opt.update(1, cfg.learning_rate, &mut model.cell.w_rec, &grads[1]);
        opt.update(2, cfg.learning_rate, &mut model.cell.b, &grads[2]);
        model.head.apply_grads(&grads[3..], &mut opt, cfg.learning_rate, 3);
    }
    Ok(model)
}
