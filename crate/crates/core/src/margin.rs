//! Transformed margin distributions and per-layer percentile signatures.
//!
//! For every layer `l` of a trained network (input and output layers
//! included), each training point gets a first-order margin estimate
//! `y*f(x) / ||grad_{x^l} f||`, normalized by the square root of the layer's
//! total variation and squashed to `[-lambda, lambda]` with a scaled tanh.
//! Misclassified points are kept (they land on the negative side).
//! The layer's distribution is reduced to its {5, 25, 50, 75, 95}th
//! percentiles; stacking one row per layer yields the signature matrix the
//! gap predictors consume.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Network;
use crate::spiral::Dataset;

/// Smoothing constant added to both denominator factors.
pub const MARGIN_EPS: f64 = 1e-6;

/// Percentile levels of the compact signature.
pub const PERCENTILE_LEVELS: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

/// Per-layer percentile rows plus the squash constant they were extracted
/// with. Row count is always network depth + 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureMatrix {
    pub rows: Vec<[f64; 5]>,
    pub lambda: f64,
}

impl SignatureMatrix {
    /// Network depth implied by the row count.
    pub fn depth(&self) -> usize {
        self.rows.len().saturating_sub(2)
    }

    /// Checks the structural invariants: entries bounded by lambda and rows
    /// sorted non-decreasing.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            for v in row {
                if !(v.abs() <= self.lambda) {
                    return Err(Error::Eval(format!(
                        "row {i} entry {v} outside [-{}, {}]",
                        self.lambda, self.lambda
                    )));
                }
            }
            if row.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Eval(format!("row {i} is not sorted: {row:?}")));
            }
        }
        Ok(())
    }
}

/// Transformed margin of one point at one layer:
/// `lambda * tanh( y*f / (lambda * (||grad|| + eps) * (sqrt(tv) + eps)) )`.
///
/// The sign of the result always equals the sign of `y*f`.
pub fn layer_distance(
    f_out: f64,
    label: i8,
    grad_norm: f64,
    total_variation: f64,
    lambda: f64,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
    }
    if !(grad_norm >= 0.0) || !(total_variation >= 0.0) {
        return Err(Error::domain(
            "gradient norm and total variation must be nonnegative".to_string(),
        ));
    }
    let y = label as f64;
    let denom = lambda * (grad_norm + MARGIN_EPS) * (total_variation.sqrt() + MARGIN_EPS);
    Ok(lambda * (y * f_out / denom).tanh())
}

/// Sum over coordinates of the population variance across the vectors.
pub fn total_variation(vectors: &[&[f64]]) -> Result<f64> {
    if vectors.is_empty() {
        return Err(Error::domain("total variation of an empty set".to_string()));
    }
    let n = vectors.len() as f64;
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::domain("vectors must share one dimension".to_string()));
    }
    let mut tv = 0.0;
    for j in 0..dim {
        let mean = vectors.iter().map(|v| v[j]).sum::<f64>() / n;
        tv += vectors.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / n;
    }
    Ok(tv)
}

/// The {5, 25, 50, 75, 95}th percentiles by linear interpolation between
/// order statistics (index `p/100 * (n-1)`).
pub fn percentiles(values: &[f64]) -> Result<[f64; 5]> {
    if values.is_empty() {
        return Err(Error::domain("percentiles of an empty list".to_string()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("percentiles of NaN values".to_string()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaNs"));
    let n = sorted.len();
    let mut out = [0.0; 5];
    for (slot, p) in out.iter_mut().zip(PERCENTILE_LEVELS) {
        let idx = p / 100.0 * (n - 1) as f64;
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        let frac = idx - lo as f64;
        *slot = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
    }
    Ok(out)
}

/// Runs inference-mode traces over the whole training set and assembles the
/// signature matrix, one percentile row per layer from input to output.
pub fn extract_signature(net: &Network, train_data: &Dataset, lambda: f64) -> Result<SignatureMatrix> {
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
    }
    if train_data.points.is_empty() {
        return Err(Error::domain("signature extraction needs a nonempty dataset".to_string()));
    }
    let traces = train_data
        .points
        .iter()
        .map(|p| net.forward_inference([p.x, p.y]))
        .collect::<Result<Vec<_>>>()?;
    let depth = net.depth();
    let mut rows = Vec::with_capacity(depth + 2);
    let mut distances = Vec::with_capacity(train_data.points.len());
    for layer in 0..=depth + 1 {
        let acts: Vec<&[f64]> = traces.iter().map(|t| t.layers[layer].as_slice()).collect();
        let tv = total_variation(&acts)?;
        distances.clear();
        for (trace, point) in traces.iter().zip(&train_data.points) {
            let grad = net.grad_wrt_activation(trace, layer)?;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            distances.push(layer_distance(trace.output(), point.label, norm, tv, lambda)?);
        }
        rows.push(percentiles(&distances)?);
    }
    Ok(SignatureMatrix { rows, lambda })
}
