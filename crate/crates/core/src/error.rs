use thiserror::Error;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model too large: |m| = {size} must be below n = {n}")]
    ModelTooLarge { size: usize, n: usize },
    #[error("negative MSPE estimate {0:e}")]
    NegativeEstimate(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
