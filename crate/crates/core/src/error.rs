use thiserror::Error;

/// Errors raised by the detection pipeline and its harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Hurst index {0} outside the supported range [0.01, 0.99]")]
    InvalidHurst(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("circulant embedding is not positive semi-definite (min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e})")]
    EmbeddingNotPsd {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("grid of {count} increments exceeds the exact sampler limit of {limit}")]
    SizeLimitExceeded { count: usize, limit: usize },

    #[error("change point {0} is not supported; only 0 and infinity can be simulated")]
    UnsupportedTau(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("traces are defined on different grids")]
    GridMismatch,

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
