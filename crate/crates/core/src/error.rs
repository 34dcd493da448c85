use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("numerical failure at iteration {iteration}: {reason}")]
    NumericalFailure { iteration: u64, reason: String },

    #[error("non-finite Stein kernel value for sample pair ({row}, {col})")]
    NonFiniteStein { row: usize, col: usize },

    #[error("chain diverged")]
    Diverged,

    #[error("every arm diverged")]
    AllDiverged,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
