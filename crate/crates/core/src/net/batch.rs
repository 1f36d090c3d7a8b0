//! Mini-batch forward/backward passes over a recorded tape.
//!
//! The tape keeps every intermediate the backward pass needs (post-affine
//! values, batch-norm normalized values and statistics, ReLU outputs,
//! dropout masks). Buffers are reused across steps via the `_into` variants;
//! a training step makes no heap allocations beyond its first call.
//!
//! Dropout masks are always supplied by the caller, so the same loss can be
//! re-evaluated with frozen masks — which is exactly what finite-difference
//! gradient checks require.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Mode, Network, BN_EPS, IN_DIM};

#[derive(Debug, Clone, Default)]
pub struct LayerTape {
    /// Post-affine values, batch x out.
    pub z: Vec<f64>,
    /// Batch-norm normalized values, batch x out; empty without batch norm.
    pub xhat: Vec<f64>,
    /// Statistics used for normalization (batch stats in training mode,
    /// moving stats in inference mode).
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Post-ReLU activations, batch x out.
    pub a: Vec<f64>,
    /// Dropout scale per element (0 or 1/keep); empty when dropout is off.
    pub mask: Vec<f64>,
    /// Post-dropout activations; empty when dropout is off (the layer output
    /// is then `a` itself, see [`Self::output`]).
    pub out: Vec<f64>,
}

impl LayerTape {
    /// The values this layer feeds forward.
    pub fn output(&self) -> &[f64] {
        if self.mask.is_empty() {
            &self.a
        } else {
            &self.out
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchTape {
    pub mode: Mode,
    pub batch: usize,
    pub input: Vec<f64>,
    pub layers: Vec<LayerTape>,
    pub logits: Vec<f64>,
}

impl BatchTape {
    pub fn new() -> Self {
        BatchTape { mode: Mode::Inference, batch: 0, input: Vec::new(), layers: Vec::new(), logits: Vec::new() }
    }
}

impl Default for BatchTape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the loss with respect to every trainable tensor, in the same
/// canonical order as [`Network::for_each_tensor_mut`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl NetGrads {
    pub fn zeros_like(net: &Network) -> Self {
        NetGrads { tensors: net.tensor_sizes().into_iter().map(|n| vec![0.0; n]).collect() }
    }

    fn reset(&mut self) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

impl Network {
    /// Draws one dropout mask (scale factors) per hidden layer for a batch of
    /// the given size. Returns an empty vector when the dropout rate is zero.
    pub fn draw_dropout_masks(&self, batch: usize, rng: &mut impl rand::Rng) -> Vec<Vec<f64>> {
        let rate = self.hparams.dropout_rate;
        if rate <= 0.0 {
            return Vec::new();
        }
        let keep = 1.0 - rate;
        self.hidden
            .iter()
            .map(|hl| {
                (0..batch * hl.affine.out_dim)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// Batch forward pass into a reusable tape.
    ///
    /// `inputs` is row-major `batch x 2`. In training mode with a nonzero
    /// dropout rate, `masks` must carry one scale vector per hidden layer.
    pub fn batch_forward_into(
        &self,
        inputs: &[f64],
        batch: usize,
        mode: Mode,
        masks: Option<&[Vec<f64>]>,
        tape: &mut BatchTape,
    ) -> Result<()> {
        if inputs.len() != batch * IN_DIM || batch == 0 {
            return Err(Error::domain("inputs must be a nonempty batch x 2 matrix".to_string()));
        }
        let dropout_active = mode == Mode::Training && self.hparams.dropout_rate > 0.0;
        if dropout_active && masks.is_none() {
            return Err(Error::config("dropout requires masks in training mode".to_string()));
        }
        tape.mode = mode;
        tape.batch = batch;
        tape.input.clear();
        tape.input.extend_from_slice(inputs);
        tape.layers.resize_with(self.hidden.len(), LayerTape::default);

        for (i, hl) in self.hidden.iter().enumerate() {
            let (d_in, d_out) = (hl.affine.in_dim, hl.affine.out_dim);
            // Split so the previous layer's output stays borrowable.
            let (done, rest) = tape.layers.split_at_mut(i);
            let lt = &mut rest[0];
            let x: &[f64] = if i == 0 { &tape.input } else { done[i - 1].output() };

            lt.z.resize(batch * d_out, 0.0);
            for b in 0..batch {
                let xi = &x[b * d_in..(b + 1) * d_in];
                let zrow = &mut lt.z[b * d_out..(b + 1) * d_out];
                for o in 0..d_out {
                    let wrow = &hl.affine.w[o * d_in..(o + 1) * d_in];
                    let mut acc = hl.affine.b[o];
                    for (wv, xv) in wrow.iter().zip(xi) {
                        acc += wv * xv;
                    }
                    zrow[o] = acc;
                }
            }

            lt.a.resize(batch * d_out, 0.0);
            if let Some(bn) = &hl.bn {
                lt.mean.resize(d_out, 0.0);
                lt.var.resize(d_out, 0.0);
                lt.xhat.resize(batch * d_out, 0.0);
                match mode {
                    Mode::Training => {
                        for j in 0..d_out {
                            let mut s = 0.0;
                            for b in 0..batch {
                                s += lt.z[b * d_out + j];
                            }
                            let mu = s / batch as f64;
                            let mut sv = 0.0;
                            for b in 0..batch {
                                let d = lt.z[b * d_out + j] - mu;
                                sv += d * d;
                            }
                            lt.mean[j] = mu;
                            lt.var[j] = sv / batch as f64;
                        }
                    }
                    Mode::Inference => {
                        lt.mean.copy_from_slice(&bn.moving_mean);
                        lt.var.copy_from_slice(&bn.moving_var);
                    }
                }
                for j in 0..d_out {
                    let inv = 1.0 / (lt.var[j] + BN_EPS).sqrt();
                    for b in 0..batch {
                        let xh = (lt.z[b * d_out + j] - lt.mean[j]) * inv;
                        lt.xhat[b * d_out + j] = xh;
                        lt.a[b * d_out + j] = (bn.gamma[j] * xh + bn.beta[j]).max(0.0);
                    }
                }
            } else {
                lt.xhat.clear();
                lt.mean.clear();
                lt.var.clear();
                for (av, zv) in lt.a.iter_mut().zip(&lt.z) {
                    *av = zv.max(0.0);
                }
            }

            if dropout_active {
                let mask = &masks.expect("checked above")[i];
                if mask.len() != batch * d_out {
                    return Err(Error::domain("dropout mask has wrong shape".to_string()));
                }
                lt.mask.clear();
                lt.mask.extend_from_slice(mask);
                lt.out.resize(batch * d_out, 0.0);
                for k in 0..batch * d_out {
                    lt.out[k] = lt.a[k] * lt.mask[k];
                }
            } else {
                lt.mask.clear();
                lt.out.clear();
            }
        }

        let last: &[f64] = match tape.layers.last() {
            Some(lt) => lt.output(),
            None => &tape.input,
        };
        let d_in = self.output.in_dim;
        tape.logits.resize(batch, 0.0);
        for b in 0..batch {
            let xi = &last[b * d_in..(b + 1) * d_in];
            let mut acc = self.output.b[0];
            for (wv, xv) in self.output.w.iter().zip(xi) {
                acc += wv * xv;
            }
            tape.logits[b] = acc;
        }
        Ok(())
    }

    /// Allocating convenience wrapper around [`Self::batch_forward_into`].
    pub fn batch_forward(
        &self,
        inputs: &[f64],
        batch: usize,
        mode: Mode,
        masks: Option<&[Vec<f64>]>,
    ) -> Result<BatchTape> {
        let mut tape = BatchTape::new();
        self.batch_forward_into(inputs, batch, mode, masks, &mut tape)?;
        Ok(tape)
    }

    /// Backpropagates `d_logits` through the tape, writing parameter
    /// gradients. Batch-norm backward goes through the batch statistics in
    /// training mode and through the (constant) moving statistics in
    /// inference mode.
    pub fn batch_backward_into(&self, tape: &BatchTape, d_logits: &[f64], grads: &mut NetGrads) {
        assert_eq!(d_logits.len(), tape.batch);
        grads.reset();
        let batch = tape.batch;
        let depth = self.hidden.len();
        let n_tensors = grads.tensors.len();

        // Output layer.
        let last: &[f64] = match tape.layers.last() {
            Some(lt) => lt.output(),
            None => &tape.input,
        };
        let d_in = self.output.in_dim;
        let mut d_cur = vec![0.0; batch * d_in];
        {
            let (gw, gb) = {
                let (a, b) = grads.tensors.split_at_mut(n_tensors - 1);
                (&mut a[n_tensors - 2], &mut b[0])
            };
            for b_i in 0..batch {
                let dl = d_logits[b_i];
                gb[0] += dl;
                let xi = &last[b_i * d_in..(b_i + 1) * d_in];
                for j in 0..d_in {
                    gw[j] += dl * xi[j];
                    d_cur[b_i * d_in + j] = self.output.w[j] * dl;
                }
            }
        }

        // Hidden layers, top to bottom.
        let mut tensor_idx = n_tensors - 2;
        for i in (0..depth).rev() {
            let hl = &self.hidden[i];
            let lt = &tape.layers[i];
            let (din, dout) = (hl.affine.in_dim, hl.affine.out_dim);
            let n_layer_tensors = if hl.bn.is_some() { 4 } else { 2 };
            tensor_idx -= n_layer_tensors;

            // Through dropout and ReLU: d wrt the pre-ReLU value u.
            let mut d_u = d_cur;
            for b_i in 0..batch {
                for j in 0..dout {
                    let k = b_i * dout + j;
                    let mut v = d_u[k];
                    if !lt.mask.is_empty() {
                        v *= lt.mask[k];
                    }
                    if lt.a[k] <= 0.0 {
                        v = 0.0;
                    }
                    d_u[k] = v;
                }
            }

            // Through batch norm: d wrt the post-affine value z.
            let d_z = if let Some(bn) = &hl.bn {
                let mut d_z = vec![0.0; batch * dout];
                let (g_gamma, g_beta) = {
                    let (a, b) = grads.tensors.split_at_mut(tensor_idx + 3);
                    (&mut a[tensor_idx + 2], &mut b[0])
                };
                for j in 0..dout {
                    let inv = 1.0 / (lt.var[j] + BN_EPS).sqrt();
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xhat = 0.0;
                    for b_i in 0..batch {
                        let k = b_i * dout + j;
                        sum_dy += d_u[k];
                        sum_dy_xhat += d_u[k] * lt.xhat[k];
                    }
                    g_gamma[j] += sum_dy_xhat;
                    g_beta[j] += sum_dy;
                    match tape.mode {
                        Mode::Training => {
                            let scale = bn.gamma[j] * inv / batch as f64;
                            for b_i in 0..batch {
                                let k = b_i * dout + j;
                                d_z[k] = scale
                                    * (batch as f64 * d_u[k] - sum_dy - lt.xhat[k] * sum_dy_xhat);
                            }
                        }
                        Mode::Inference => {
                            let slope = bn.gamma[j] * inv;
                            for b_i in 0..batch {
                                let k = b_i * dout + j;
                                d_z[k] = d_u[k] * slope;
                            }
                        }
                    }
                }
                d_z
            } else {
                d_u
            };

            // Through the affine map.
            let x: &[f64] = if i == 0 { &tape.input } else { tape.layers[i - 1].output() };
            let mut d_prev = vec![0.0; batch * din];
            {
                let (gw, gb) = {
                    let (a, b) = grads.tensors.split_at_mut(tensor_idx + 1);
                    (&mut a[tensor_idx], &mut b[0])
                };
                for b_i in 0..batch {
                    let xi = &x[b_i * din..(b_i + 1) * din];
                    let dzi = &d_z[b_i * dout..(b_i + 1) * dout];
                    let dpi = &mut d_prev[b_i * din..(b_i + 1) * din];
                    for o in 0..dout {
                        let dz = dzi[o];
                        gb[o] += dz;
                        let wrow = &hl.affine.w[o * din..(o + 1) * din];
                        let gwrow = &mut gw[o * din..(o + 1) * din];
                        for (g, xv) in gwrow.iter_mut().zip(xi) {
                            *g += dz * xv;
                        }
                        for (dp, wv) in dpi.iter_mut().zip(wrow) {
                            *dp += wv * dz;
                        }
                    }
                }
            }
            d_cur = d_prev;
        }
    }

    /// Updates moving batch-norm statistics from a training-mode tape.
    pub fn update_moving_stats(&mut self, tape: &BatchTape) {
        debug_assert_eq!(tape.mode, Mode::Training);
        for (hl, lt) in self.hidden.iter_mut().zip(&tape.layers) {
            if let Some(bn) = &mut hl.bn {
                for j in 0..bn.moving_mean.len() {
                    bn.moving_mean[j] =
                        super::BN_MOMENTUM * bn.moving_mean[j] + (1.0 - super::BN_MOMENTUM) * lt.mean[j];
                    bn.moving_var[j] =
                        super::BN_MOMENTUM * bn.moving_var[j] + (1.0 - super::BN_MOMENTUM) * lt.var[j];
                }
            }
        }
    }

    /// Applies gradients with the given optimizer state, tensors in canonical
    /// order.
    pub fn apply_grads(&mut self, grads: &NetGrads, opt: &mut super::optim::OptState, lr: f64) {
        opt.begin_step();
        let tensors = &grads.tensors;
        self.for_each_tensor_mut(|idx, param| {
            opt.update(idx, lr, param, &tensors[idx]);
        });
    }
}

/// Numerically stable sigmoid cross-entropy on scalar logits against +1/-1
/// labels. Writes d(mean loss)/d(logit) into `d_logits` and returns the mean
/// loss.
pub fn sigmoid_ce_into(logits: &[f64], labels: &[i8], d_logits: &mut Vec<f64>) -> f64 {
    assert_eq!(logits.len(), labels.len());
    let n = logits.len() as f64;
    d_logits.clear();
    let mut total = 0.0;
    for (&z, &y) in logits.iter().zip(labels) {
        let t = if y > 0 { 1.0 } else { 0.0 };
        total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        let sig = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { let e = z.exp(); e / (1.0 + e) };
        d_logits.push((sig - t) / n);
    }
    total / n
}
