//! Generalization-gap predictors: linear, feed-forward, and recurrent.
//!
//! All three regress a scalar gap (or test accuracy) from a network's
//! signature matrix. The linear and feed-forward models first collapse the
//! variable-depth matrix with an elementwise row sum; the recurrent model
//! consumes the rows as a sequence, input layer first, and is therefore
//! order-sensitive.

mod dense;
mod linear;
mod rnn;

pub use dense::DenseStack;
pub use linear::{fit_linear, LinearModel};
pub use rnn::{RnnCell, RnnModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margin::SignatureMatrix;
use crate::seed::{self, stream};

/// Squash constant for one-model-per-dataset tasks.
pub const LAMBDA_DATASET_DEPENDENT: f64 = 0.5;
/// Squash constant for single-model (dataset-independent) tasks.
pub const LAMBDA_DATASET_INDEPENDENT: f64 = 2.5;
/// All gap predictors train with Adagrad at this rate.
pub const GGP_LEARNING_RATE: f64 = 0.1;
pub const GGP_BATCH_SIZE: usize = 64;
pub const DNN_STEPS_DATASET_DEPENDENT: usize = 5_000;
pub const DNN_STEPS_DATASET_INDEPENDENT: usize = 25_000;
pub const RNN_STEPS_DATASET_DEPENDENT: usize = 2_500;
pub const RNN_STEPS_DATASET_INDEPENDENT: usize = 25_000;
/// Hidden width shared by the feed-forward trunk and the recurrent cell.
pub const GGP_HIDDEN: usize = 16;

/// One-model-per-dataset vs. one-model-across-datasets training recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    DatasetDependent,
    DatasetIndependent,
}

impl TaskMode {
    pub fn lambda(self) -> f64 {
        match self {
            TaskMode::DatasetDependent => LAMBDA_DATASET_DEPENDENT,
            TaskMode::DatasetIndependent => LAMBDA_DATASET_INDEPENDENT,
        }
    }
}

/// Predictor family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Dnn,
    Rnn,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Linear => write!(f, "linear"),
            Family::Dnn => write!(f, "dnn"),
            Family::Rnn => write!(f, "rnn"),
        }
    }
}

/// One training example for a gap predictor. The id fields exist so fold
/// construction can split by seed, hyperparameter, or dataset variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GgpExample {
    pub signature: SignatureMatrix,
    /// Generalization gap, or test accuracy in test-accuracy label mode.
    pub label: f64,
    pub net_id: u64,
    pub variation_id: u32,
    pub data_seed: u64,
    pub hparam_id: u32,
}

/// A fitted predictor. Each variant stores the squash constant its features
/// were extracted with; predictions on signatures with a different constant
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum GgpModel {
    Linear(LinearModel),
    Dnn(DnnModel),
    Rnn(RnnModel),
}

impl GgpModel {
    pub fn family(&self) -> Family {
        match self {
            GgpModel::Linear(_) => Family::Linear,
            GgpModel::Dnn(_) => Family::Dnn,
            GgpModel::Rnn(_) => Family::Rnn,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            GgpModel::Linear(m) => m.lambda,
            GgpModel::Dnn(m) => m.lambda,
            GgpModel::Rnn(m) => m.lambda,
        }
    }

    /// Deterministic scalar prediction; no clipping is applied.
    pub fn predict(&self, signature: &SignatureMatrix) -> Result<f64> {
        check_lambda(self.lambda(), signature.lambda)?;
        Ok(match self {
            GgpModel::Linear(m) => m.predict_sum(&aggregate_sum(signature)),
            GgpModel::Dnn(m) => m.stack.predict(&aggregate_sum(signature)),
            GgpModel::Rnn(m) => m.predict_rows(&signature.rows),
        })
    }
}

pub(crate) fn check_lambda(expected: f64, got: f64) -> Result<()> {
    if (expected - got).abs() > 1e-12 {
        return Err(Error::config(format!(
            "lambda mismatch: model/task expects {expected}, signature carries {got}"
        )));
    }
    Ok(())
}

/// All examples must share one squash constant; returns it.
pub(crate) fn common_lambda(examples: &[GgpExample]) -> Result<f64> {
    let first = examples
        .first()
        .ok_or_else(|| Error::domain("no examples to fit".to_string()))?
        .signature
        .lambda;
    for ex in examples {
        check_lambda(first, ex.signature.lambda)?;
    }
    Ok(first)
}

/// Elementwise sum of the signature rows, the depth-independent feature
/// vector used by the linear and feed-forward predictors.
pub fn aggregate_sum(signature: &SignatureMatrix) -> [f64; 5] {
    let mut sum = [0.0; 5];
    for row in &signature.rows {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v;
        }
    }
    sum
}

/// Feed-forward gap predictor: sum-aggregated signature through a
/// 5 -> 16 -> 16 -> 16 -> 1 ReLU stack with a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnModel {
    pub stack: DenseStack,
    pub lambda: f64,
    pub fit_seed: u64,
}

/// Training recipe for the iterative predictors. The mode constructors pin
/// the published recipe; deviating from it is possible but explicit.
#[derive(Debug, Clone, Copy)]
pub struct GgpTrainConfig {
    pub lambda: f64,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub fit_seed: u64,
}

impl GgpTrainConfig {
    pub fn dnn(mode: TaskMode, fit_seed: u64) -> Self {
        GgpTrainConfig {
            lambda: mode.lambda(),
            steps: match mode {
                TaskMode::DatasetDependent => DNN_STEPS_DATASET_DEPENDENT,
                TaskMode::DatasetIndependent => DNN_STEPS_DATASET_INDEPENDENT,
            },
            batch: GGP_BATCH_SIZE,
            learning_rate: GGP_LEARNING_RATE,
            fit_seed,
        }
    }

    pub fn rnn(mode: TaskMode, fit_seed: u64) -> Self {
        GgpTrainConfig {
            steps: match mode {
                TaskMode::DatasetDependent => RNN_STEPS_DATASET_DEPENDENT,
                TaskMode::DatasetIndependent => RNN_STEPS_DATASET_INDEPENDENT,
            },
            ..Self::dnn(mode, fit_seed)
        }
    }
}

/// Fits the feed-forward predictor with the recipe for `mode`; the examples'
/// squash constant must match the mode's.
pub fn fit_dnn(examples: &[GgpExample], mode: TaskMode, fit_seed: u64) -> Result<DnnModel> {
    fit_dnn_with(examples, &GgpTrainConfig::dnn(mode, fit_seed))
}

pub fn fit_dnn_with(examples: &[GgpExample], cfg: &GgpTrainConfig) -> Result<DnnModel> {
    let lambda = common_lambda(examples)?;
    check_lambda(cfg.lambda, lambda)?;
    let features: Vec<[f64; 5]> = examples.iter().map(|e| aggregate_sum(&e.signature)).collect();
    let labels: Vec<f64> = examples.iter().map(|e| e.label).collect();
    let mut rng = seed::rng(&[cfg.fit_seed, stream::GGP_FIT]);
    let stack = dense::fit_mse(&[5, GGP_HIDDEN, GGP_HIDDEN, GGP_HIDDEN, 1], &features, &labels, cfg, &mut rng);
    Ok(DnnModel { stack, lambda, fit_seed: cfg.fit_seed })
}

/// Fits the recurrent predictor with the recipe for `mode`.
pub fn fit_rnn(examples: &[GgpExample], mode: TaskMode, fit_seed: u64) -> Result<RnnModel> {
    fit_rnn_with(examples, &GgpTrainConfig::rnn(mode, fit_seed))
}

pub fn fit_rnn_with(examples: &[GgpExample], cfg: &GgpTrainConfig) -> Result<RnnModel> {
    let lambda = common_lambda(examples)?;
    check_lambda(cfg.lambda, lambda)?;
    rnn::fit(examples, lambda, cfg)
}

/// Fits one family with its mode recipe. Linear ignores the iterative
/// recipe, but its examples must still match the mode's squash constant at
/// the call site that chose them.
pub fn fit_family(
    examples: &[GgpExample],
    family: Family,
    mode: TaskMode,
    fit_seed: u64,
) -> Result<GgpModel> {
    Ok(match family {
        Family::Linear => GgpModel::Linear(fit_linear(examples)?),
        Family::Dnn => GgpModel::Dnn(fit_dnn(examples, mode, fit_seed)?),
        Family::Rnn => GgpModel::Rnn(fit_rnn(examples, mode, fit_seed)?),
    })
}
