use std::io;

use thiserror::Error;

pub type Result<T, E = FhaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FhaError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("insufficient data: class {class} has {available} samples, {required} required")]
    InsufficientData {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no labeled target samples for class {0}")]
    MissingClass(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("source model below quality gate: test accuracy {accuracy:.4} < {required:.4}")]
    QualityGate { accuracy: f64, required: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FhaError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        FhaError::Shape(msg.into())
    }
}
