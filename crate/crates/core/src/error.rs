use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("acceptance rate out of range at ({i}, {j}): {value}")]
    Range { i: usize, j: usize, value: f64 },

    #[error("residual distribution is degenerate (p equals q)")]
    DegenerateResidual,

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("mode/input mismatch: {0}")]
    ModeMismatch(String),

    #[error("failed to parse config: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
