//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent configuration (lambda/mode mismatch, invalid regime
    /// combination, malformed run config).
    #[error("configuration error: {0}")]
    Config(String),

    /// The network holds non-finite (or beyond-float32) parameters.
    #[error("diverged network: {0}")]
    Diverged(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
