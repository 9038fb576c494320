use thiserror::Error;

pub type Result<T> = std::result::Result<T, DiclError>;

#[derive(Debug, Error)]
pub enum DiclError {
    /// Input does not satisfy a documented schema or invariant.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Requested more principal components than the data can support.
    #[error("requested {requested} components but the data has rank {attainable}")]
    Rank { requested: usize, attainable: usize },

    #[error("context of {len} values exceeds backend limit")]
    ContextOverflow { len: usize },

    #[error("backend error (status {status:?}, retryable: {retryable}): {message}")]
    Backend {
        status: Option<u16>,
        retryable: bool,
        message: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DiclError {
    pub fn schema(msg: impl Into<String>) -> Self {
        DiclError::Schema(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        DiclError::InvalidArgument(msg.into())
    }

    /// True for errors caused by a forecasting backend or its transport.
    pub fn is_backend(&self) -> bool {
        matches!(self, DiclError::Backend { .. } | DiclError::ContextOverflow { .. })
    }
}
