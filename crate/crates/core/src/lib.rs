//! Generalization-gap prediction over populations of small trained classifiers.
//!
//! The crate is organized as a pipeline:
//!
//! 1. [`spiral`] generates two-arm spiral classification tasks from a compact
//!    [`spiral::SpiralSpec`] recipe.
//! 2. [`net`] trains small fully-connected classifiers (the population under
//!    study) with exact, hand-rolled gradients, SGD/Adam, batch norm, and
//!    dropout, and exposes output gradients with respect to any layer's
//!    activations.
//! 3. [`margin`] reduces each trained network to a per-layer percentile
//!    signature of its transformed margin distribution.
//! 4. [`ggp`] fits linear, feed-forward, and recurrent regressors that predict
//!    a network's generalization gap from its signature alone.
//! 5. [`eval`] builds leakage-free cross-validation folds for the five
//!    evaluation regimes and computes pooled R²/L1 metrics.
//! 6. [`pipeline`] orchestrates the whole sweep: hyperparameter sampling,
//!    parallel train/extract fan-out, JSON Lines persistence, reporting, and
//!    analysis export.
//!
//! Everything is deterministic: a [`pipeline::RunConfig`] plus a root seed
//! fully determines every artifact byte, regardless of worker scheduling.

pub mod error;
pub mod eval;
pub mod ggp;
pub mod margin;
pub mod net;
pub mod pipeline;
pub mod seed;
pub mod spiral;

pub use error::{Error, Result};

/// Version tag stamped into records and manifests.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
