use thiserror::Error;

/// Errors raised by the topology, geometry, channel and receiver primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("incomparable diagrams: {0}")]
    IncomparableDiagrams(String),

    /// Too few lifetimes for a trustworthy tail fit. Carries the caller's
    /// last valid exponent so monitoring can continue.
    #[error("unreliable exponent estimate from {available} lifetimes (need {required})")]
    UnreliableEstimate {
        available: usize,
        required: usize,
        fallback: Option<f64>,
    },

    #[error("lifetimes have zero variance")]
    ZeroVariance,

    #[error("insufficient history: have {have}, need {need}")]
    InsufficientHistory { have: usize, need: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("unknown channel profile `{0}`")]
    InvalidProfile(String),

    #[error("receiver diverged: {0}")]
    Diverged(String),

    #[error("invalid calibration: {0}")]
    CalibrationInvalid(String),

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
