//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not satisfy an op's shape rule.
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    /// A forward op produced NaN or infinity.
    #[error("{op}: non-finite value in output (numeric overflow)")]
    NumericOverflow { op: &'static str },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// Zero-norm vector where a direction is required.
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(
        "no checkpoint in selection window [{start}, {end}]; checkpoint more densely near the final step"
    )]
    EmptyWindow { start: u64, end: u64 },

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("provenance violation: {0}")]
    Provenance(String),

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
