use thiserror::Error;

/// Errors raised by the core pipeline stages.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("range error: {0}")]
    Range(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("undefined feature `{feature}`: {reason}")]
    UndefinedFeature { feature: String, reason: String },

    #[error("calibration infeasible: {0}")]
    CalibrationInfeasible(String),

    #[error("window rejected by missing-data rule: {missing_slots} missing slots")]
    MissingData { missing_slots: usize },

    #[error("GP fit failed: {0}")]
    Fit(String),

    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
