use dpvs::{Budget, DpError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServerError {
    #[error("budget exceeded")]
    BudgetExceeded { remaining: Budget },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed request: {0}")]
    Malformed(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("unauthorized")]
    Unauthorized,

    /// Failure after the charge was recorded; the budget stays spent.
    #[error("query failed after charging: {message}")]
    QueryFailed { message: String, remaining: Budget },

    #[error("internal error: {0}")]
    Internal(String),
}

impl ServerError {
    pub fn code(&self) -> &'static str {
        match self {
            ServerError::BudgetExceeded { .. } => "budget_exceeded",
            ServerError::InsufficientData(_) => "insufficient_data",
            ServerError::Malformed(_) => "malformed_request",
            ServerError::NotFound(_) => "not_found",
            ServerError::Conflict(_) => "conflict",
            ServerError::Unauthorized => "unauthorized",
            ServerError::QueryFailed { .. } => "query_failed",
            ServerError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServerError::BudgetExceeded { .. } => 403,
            ServerError::InsufficientData(_) => 422,
            ServerError::Malformed(_) => 400,
            ServerError::NotFound(_) => 404,
            ServerError::Conflict(_) => 409,
            ServerError::Unauthorized => 401,
            ServerError::QueryFailed { .. } => 422,
            ServerError::Internal(_) => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let remaining = match self {
            ServerError::BudgetExceeded { remaining } | ServerError::QueryFailed { remaining, .. } => Some(*remaining),
            _ => None,
        };
        ErrorBody { code: self.code().to_string(), message: self.to_string(), remaining }
    }
}

/// JSON error payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remaining: Option<Budget>,
}

/// Library errors raised before any charge: bad input, unknown columns.
impl From<DpError> for ServerError {
    fn from(e: DpError) -> Self {
        match e {
            DpError::NotFound(m) => ServerError::NotFound(m),
            DpError::InsufficientData(m) => ServerError::InsufficientData(m),
            DpError::BudgetExceeded { remaining } => ServerError::BudgetExceeded { remaining },
            DpError::Io(m) => ServerError::Internal(m),
            other => ServerError::Malformed(other.to_string()),
        }
    }
}

pub type ServerResult<T> = std::result::Result<T, ServerError>;
