use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use crate::error::{ServerError, ServerResult};
use crate::service::{DatasetRegistration, PreviewRequest, QueryRequest, ValidationService};

pub struct AppState {
    pub service: ValidationService,
    pub api_token: Option<String>,
}

impl IntoResponse for ServerError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

fn authorize(state: &AppState, headers: &HeaderMap) -> ServerResult<()> {
    let Some(token) = &state.api_token else {
        return Ok(());
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(token.as_str()) {
        Ok(())
    } else {
        Err(ServerError::Unauthorized)
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ServerResult<T> {
    payload.map(|Json(v)| v).map_err(|e| ServerError::Malformed(e.body_text()))
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ServerResult<T> + Send + 'static) -> ServerResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServerError::Internal(e.to_string()))?
}

fn json<T: Serialize>(status: StatusCode, value: T) -> Response {
    (status, Json(value)).into_response()
}

async fn healthz() -> Response {
    json(StatusCode::OK, serde_json::json!({ "status": "ok" }))
}

async fn list_datasets(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ServerResult<Response> {
    authorize(&state, &headers)?;
    Ok(json(StatusCode::OK, serde_json::json!({ "datasets": state.service.dataset_ids() })))
}

async fn register(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    payload: Result<Json<DatasetRegistration>, JsonRejection>,
) -> ServerResult<Response> {
    authorize(&state, &headers)?;
    let reg = body(payload)?;
    let receipt = blocking(move || state.service.register_dataset(reg)).await?;
    Ok(json(StatusCode::CREATED, receipt))
}

async fn query(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    payload: Result<Json<QueryRequest>, JsonRejection>,
) -> ServerResult<Response> {
    authorize(&state, &headers)?;
    let req = body(payload)?;
    let resp = blocking(move || state.service.handle_query(&id, req)).await?;
    Ok(json(StatusCode::OK, resp))
}

async fn preview(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    payload: Result<Json<PreviewRequest>, JsonRejection>,
) -> ServerResult<Response> {
    authorize(&state, &headers)?;
    let req = body(payload)?;
    Ok(json(StatusCode::OK, state.service.preview(&id, req)?))
}

async fn budget(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ServerResult<Response> {
    authorize(&state, &headers)?;
    Ok(json(StatusCode::OK, state.service.get_budget(&id)?))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/datasets", post(register).get(list_datasets))
        .route("/datasets/{id}/queries", post(query))
        .route("/datasets/{id}/preview", post(preview))
        .route("/datasets/{id}/budget", get(budget))
        .with_state(state)
}
