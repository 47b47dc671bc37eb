use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated {what}: expected {expected} bytes, got {actual}")]
    Length {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("mask is empty")]
    EmptyMask,

    #[error("no negatives available: {0}")]
    NoNegatives(String),

    #[error("context has {tokens} tokens but positional embedding holds only {max}")]
    Capacity { tokens: usize, max: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("training aborted: {0}")]
    Aborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input data or configuration rather than
    /// a defect in the engine itself.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::State(_) | Error::NonFinite(_))
    }
}
