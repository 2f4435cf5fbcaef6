use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DprError>;

#[derive(Debug, Error)]
pub enum DprError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("class index {index} out of range for {classes} classes")]
    Index { index: usize, classes: usize },
    #[error("training failed at step {step}: {reason}")]
    Training { step: usize, reason: String },
    #[error("malformed file at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("sampling table is degenerate: every disagreement is below {threshold}")]
    DegenerateTable { threshold: f64 },
    #[error("inconsistent inputs: {0}")]
    Consistency(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("unsupported feature layout: {0}")]
    UnsupportedShape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DprError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        DprError::Parameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DprError::Shape(msg.into())
    }
}
