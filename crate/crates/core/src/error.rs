use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {quantity} at timestep {timestep}")]
    NonFinite { quantity: &'static str, timestep: usize },

    #[error("non-finite value returned by {0}")]
    NumericFailure(&'static str),

    #[error(
        "curvature matrix is not positive definite along CG direction at iteration {iteration} (sᵀAs = {curvature:e})"
    )]
    NotPositiveDefinite { iteration: usize, curvature: f64 },

    #[error("reduction ratio undefined: quadratic change is zero")]
    UndefinedRatio,

    #[error("oracle refused: {0}")]
    CostGuard(String),

    #[error("dense factorization failed: {0}")]
    Factorization(&'static str),

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
