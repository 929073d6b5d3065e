use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solve failed ({reason}); residual norm {residual:e}")]
    SolverFailure { reason: String, residual: f64 },

    #[error("forward model failed at z = {z:?}: {source}")]
    ModelFailure {
        z: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("propagation failed in Kalman iteration {iteration}: {source}")]
    Propagation {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("covariance kernel is not positive semi-definite: eigenvalue {eigenvalue:e} (largest {largest:e})")]
    IndefiniteKernel { eigenvalue: f64, largest: f64 },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("budget infeasible: {0}")]
    Budget(String),

    #[error("bad artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn artifact(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Artifact {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
