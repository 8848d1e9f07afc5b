//! Budget-enforcing validation server over the `dpvs` library: a dataset
//! registry with persistent ledgers, a JSON-over-HTTP API, and the logic
//! behind the `dpvs` command-line tool.
//!
//! Routes:
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | GET | /healthz | | `{"status": "ok"}` |
//! | POST | /datasets | [`DatasetRegistration`] | [`RegistrationReceipt`] (201) |
//! | GET | /datasets | | `{"datasets": [...]}` |
//! | POST | /datasets/{id}/queries | [`QueryRequest`] | [`QueryResponse`] |
//! | POST | /datasets/{id}/preview | [`PreviewRequest`] | [`PreviewResponse`] |
//! | GET | /datasets/{id}/budget | | [`BudgetResponse`] |
//!
//! Errors are `{"code", "message", "remaining"?}` with codes
//! `budget_exceeded` (403), `insufficient_data` (422), `malformed_request`
//! (400), `not_found` (404), `conflict` (409), `unauthorized` (401),
//! `query_failed` (422, charge kept) and `internal` (500).
//!
//! An `insufficient_data` reply is not charged. Whether a filtered subset
//! is below the minimum size therefore leaks without any privacy cost.

pub mod config;
pub mod error;
pub mod http;
pub mod service;

pub use config::ServerConfig;
pub use error::{ErrorBody, ServerError, ServerResult};
pub use http::{router, AppState};
pub use service::{
    BudgetResponse, BudgetStatus, DatasetRegistration, PreviewRequest, PreviewResponse, Query, QueryRequest,
    QueryResponse, QueryResult, RegistrationReceipt, ValidationService,
};

use std::sync::Arc;

/// Binds and serves until ctrl-c.
pub async fn serve(config: ServerConfig) -> ServerResult<()> {
    let service = ValidationService::open(&config)?;
    let state = Arc::new(AppState { service, api_token: config.api_token.clone() });
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .map_err(|e| ServerError::Internal(format!("cannot bind {}: {e}", config.listen)))?;
    eprintln!("listening on {}", config.listen);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServerError::Internal(e.to_string()))
}
