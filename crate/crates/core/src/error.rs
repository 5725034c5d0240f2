use thiserror::Error;

/// Errors raised by the core algorithms.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vocabulary size mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid truncation: {0}")]
    InvalidTruncation(String),

    #[error("invalid expansion configuration: {0}")]
    InvalidExpansion(String),

    #[error("node (layer {layer}, index {index}) does not exist")]
    NodeOutOfRange { layer: usize, index: usize },

    #[error("target acceptance rate {target} unreachable; achievable range is [{min:.4}, {max:.4}]")]
    UnreachableAlpha { target: f64, min: f64, max: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("internal invariant breached: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
