use thiserror::Error;

/// Errors raised by the synthesis engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-positive predictive scale q = {0}")]
    DegenerateScale(f64),

    #[error("covariance is not positive semi-definite (min eigenvalue {0:e})")]
    NotPositiveSemiDefinite(f64),

    #[error("insufficient history at t = {t}: need more than {max_lag} earlier observations")]
    InsufficientHistory { t: usize, max_lag: usize },

    #[error("all particle weights are zero at t = {0}")]
    WeightCollapse(usize),

    #[error("all scores are -inf")]
    AllScoresInfinite,

    #[error("non-finite score {value} for model {index}")]
    NonFiniteScore { index: usize, value: f64 },

    #[error("series misaligned: {0}")]
    Misaligned(String),

    #[error("{path}: line {line}, column `{column}`: {reason}")]
    Parse {
        path: String,
        line: usize,
        column: String,
        reason: String,
    },

    #[error("{path}: gap in quarterly series between {before} and {after}")]
    Gap {
        path: String,
        before: String,
        after: String,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
