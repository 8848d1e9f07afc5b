use thiserror::Error;

use crate::privacy::Budget;

/// Errors produced by mechanisms, calibrations, queries and the accountant.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("budget exceeded: remaining epsilon {}, delta {}", remaining.epsilon, remaining.delta)]
    BudgetExceeded { remaining: Budget },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DpError {
    fn from(err: std::io::Error) -> Self {
        DpError::Io(err.to_string())
    }
}

impl From<csv::Error> for DpError {
    fn from(err: csv::Error) -> Self {
        DpError::Io(err.to_string())
    }
}

impl From<serde_json::Error> for DpError {
    fn from(err: serde_json::Error) -> Self {
        DpError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DpError>;

pub(crate) fn invalid_param(msg: impl Into<String>) -> DpError {
    DpError::InvalidParameter(msg.into())
}
