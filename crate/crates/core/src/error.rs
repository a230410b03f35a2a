use thiserror::Error;

/// Errors raised by the fair-regression library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("group index {group} out of range for {groups} groups")]
    GroupOutOfRange { group: usize, groups: usize },

    #[error("group {group} has a zero coefficient vector; its direction is undefined")]
    DegenerateDirection { group: usize },

    #[error("least-squares system is singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("non-finite value in input")]
    NonFinite,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input")]
    Empty,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::NonFinite | Error::DegenerateDirection { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
