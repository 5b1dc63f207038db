use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tracing::info;

use super::pipeline::{Pipeline, PipelineError, PIPELINE_VERSION};
use crate::analytics::METRIC_VERSION;
use crate::record_store::{CasePayload, StoreError, EXPORT_FORMAT_VERSION};

const BODY_LIMIT: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::CaseNotFound(_) => StatusCode::NOT_FOUND,
            PipelineError::QuorumNotMet { .. } => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::DuplicateCaseId(_) => StatusCode::CONFLICT,
            StoreError::Io(_) | StoreError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError(status, e.to_string())
    }
}

type Shared = Arc<Pipeline>;

pub fn router(pipeline: Shared) -> Router {
    Router::new()
        .route("/cases", post(create_case))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/analyze", post(analyze))
        .route("/cases/{id}/result", get(get_result))
        .route("/health", get(health))
        .route("/version", get(version))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(pipeline)
}

async fn create_case(
    State(p): State<Shared>,
    body: Result<Json<CasePayload>, axum::extract::rejection::JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(payload) = body.map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    // Path image sources are not resolved here: a client must not be able to
    // make the server read its own files. They fail as MissingImage.
    let store = p.store().clone();
    let record = tokio::task::spawn_blocking(move || store.ingest_case(payload))
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(json!({ "case_id": record.case_id }))))
}

async fn get_case(State(p): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let record = p.store().get(&id).ok_or(PipelineError::CaseNotFound(id))?;
    Ok(Json(record))
}

async fn analyze(State(p): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(p.analyze_case(&id).await?))
}

async fn get_result(State(p): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    if !p.store().contains(&id) {
        return Err(PipelineError::CaseNotFound(id).into());
    }
    match p.results().latest(&id) {
        Ok(Some(result)) => Ok(Json(result)),
        Ok(None) => Err(ApiError(StatusCode::NOT_FOUND, format!("case `{id}` has not been analyzed"))),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn health(State(p): State<Shared>) -> impl IntoResponse {
    let endpoints = p.health().await;
    Json(json!({ "status": "ok", "cases": p.store().len(), "endpoints": endpoints }))
}

async fn version(State(p): State<Shared>) -> impl IntoResponse {
    Json(json!({
        "pipeline_version": PIPELINE_VERSION,
        "template_version": p.prompts().version(),
        "export_format_version": EXPORT_FORMAT_VERSION,
        "metric_version": METRIC_VERSION,
    }))
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::BindFailure { addr: addr.to_string(), source })
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve_with_shutdown<F>(pipeline: Pipeline, listener: TcpListener, shutdown: F) -> Result<(), ServeError>
where
    F: Future<Output = ()> + Send + 'static,
{
    let addr: SocketAddr = listener.local_addr()?;
    info!(%addr, "serving");
    axum::serve(listener, router(Arc::new(pipeline)))
        .with_graceful_shutdown(shutdown)
        .await?;
    info!("server stopped");
    Ok(())
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(pipeline: Pipeline, addr: &str) -> Result<(), ServeError> {
    let listener = bind(addr).await?;
    serve_with_shutdown(pipeline, listener, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
