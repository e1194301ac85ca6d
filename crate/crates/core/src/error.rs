use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid time {time}: {reason}")]
    InvalidTime { time: f64, reason: &'static str },

    #[error("time {0} is not a point of the noise grid")]
    OffGrid(f64),

    #[error("exponent {0} is not present in the realization's exponent set")]
    MissingExponent(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("solver `{0}` does not record a query trace")]
    NoTrace(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
