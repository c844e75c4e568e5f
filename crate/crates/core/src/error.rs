use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidLaw(String),

    #[error("invalid environment model: {0}")]
    InvalidModel(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("numerical breakdown: {0}")]
    Numerical(String),

    #[error("query at j={j} exceeds the series cutoff K={cutoff}")]
    BeyondCutoff { j: usize, cutoff: usize },

    /// The estimator input carries no information (all-zero or all-one
    /// probabilities, extinct batches, deterministic paths).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient samples: {0}")]
    Insufficient(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
