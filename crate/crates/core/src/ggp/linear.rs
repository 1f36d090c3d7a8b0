//! Ordinary least squares over sum-aggregated signatures.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{aggregate_sum, common_lambda, GgpExample};

/// Singular values below `max_sv * RANK_TOL` are treated as zero; the solve
/// then returns the least-norm solution.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coef: [f64; 5],
    pub intercept: f64,
    pub lambda: f64,
    /// Set when the design matrix was rank-deficient and the least-norm
    /// solution was taken; surfaced in evaluation reports.
    pub rank_deficient: bool,
}

impl LinearModel {
    pub fn predict_sum(&self, sum: &[f64; 5]) -> f64 {
        self.intercept + self.coef.iter().zip(sum).map(|(c, s)| c * s).sum::<f64>()
    }
}

/// Exact least-squares fit (SVD) of `label ~ intercept + sum(signature)`.
/// Requires at least 6 examples (5 features plus the intercept).
pub fn fit_linear(examples: &[GgpExample]) -> Result<LinearModel> {
    let lambda = common_lambda(examples)?;
    let n = examples.len();
    if n < 6 {
        return Err(Error::domain(format!(
            "linear fit needs at least 6 examples, got {n}"
        )));
    }
    let x = DMatrix::from_fn(n, 6, |r, c| {
        if c == 0 {
            1.0
        } else {
            aggregate_sum(&examples[r].signature)[c - 1]
        }
    });
    let y = DVector::from_iterator(n, examples.iter().map(|e| e.label));
    let svd = x.svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = max_sv * RANK_TOL;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let beta = svd
        .solve(&y, tol)
        .map_err(|e| Error::Eval(format!("least squares solve failed: {e}")))?;
    let mut coef = [0.0; 5];
    coef.copy_from_slice(&beta.as_slice()[1..6]);
    Ok(LinearModel { coef, intercept: beta[0], lambda, rank_deficient: rank < 6 })
}
