use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bag: {0}")]
    InvalidBag(String),

    #[error("label {label} outside class domain [0, {k})")]
    LabelDomain { label: usize, k: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NumericDomain(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("undefined at support point {point}: zero total bag density")]
    UndefinedPoint { point: usize },

    #[error("did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64, best: Vec<Vec<f64>> },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("cannot resolve dataset `{name}`: {reason}")]
    Resolution { name: String, reason: String },

    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: u64,
        reason: String,
        snapshot: Box<crate::trainer::TrainSnapshot>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("plot rendering failed: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
