//! HTTP front end for [`SessionStore`].

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sortcma_core::session::{AnswerAck, QueryResponse, SessionStatus, SessionStore, WireChoice};
use sortcma_core::{Error, SpaceConfig};

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: String,
}

/// A core error rendered as `{error, code}` with a matching status.
pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        match &self.0 {
            Error::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            Error::StaleQuery { .. } => (StatusCode::CONFLICT, "stale_query"),
            Error::DuplicateSession(_) => (StatusCode::CONFLICT, "duplicate_session"),
            Error::InvalidPhase(_) => (StatusCode::CONFLICT, "invalid_phase"),
            Error::NoHeuristic => (StatusCode::BAD_REQUEST, "no_heuristic"),
            Error::InvalidConfig(_) | Error::DimensionMismatch { .. } | Error::NonPositive { .. } | Error::NonFinite { .. } => {
                (StatusCode::BAD_REQUEST, "invalid_config")
            }
            Error::Json(_) => (StatusCode::BAD_REQUEST, "invalid_json"),
            Error::Hook(_) => (StatusCode::BAD_GATEWAY, "hook_failed"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(ErrorBody { error: self.0.to_string(), code: code.into() })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Store calls may run hooks or hit the disk, so they go to the blocking pool.
async fn blocking<T, F>(store: Arc<SessionStore>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&SessionStore) -> sortcma_core::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError(Error::Hook(format!("worker failed: {e}"))))?
        .map(Json)
        .map_err(ApiError)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerBody {
    pub query_id: String,
    pub choice: WireChoice,
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}", get(status))
        .route("/api/sessions/{id}/query", get(query))
        .route("/api/sessions/{id}/answer", post(answer))
        .route("/api/sessions/{id}/terminate", post(terminate))
        .route("/media/{hash}", get(media))
        .with_state(store)
}

/// An empty body creates a session from the server's default config.
async fn create(State(store): State<Arc<SessionStore>>, body: Bytes) -> ApiResult<Created> {
    let config = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        let text = std::str::from_utf8(&body).map_err(|e| ApiError(Error::InvalidConfig(e.to_string())))?;
        Some(SpaceConfig::from_json(text)?)
    };
    blocking(store, move |s| s.create(config).map(|session_id| Created { session_id })).await
}

async fn status(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<SessionStatus> {
    blocking(store, move |s| s.status(&id)).await
}

async fn query(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<QueryResponse> {
    blocking(store, move |s| s.query(&id)).await
}

async fn answer(State(store): State<Arc<SessionStore>>, Path(id): Path<String>, body: Bytes) -> ApiResult<AnswerAck> {
    let body: AnswerBody = serde_json::from_slice(&body).map_err(|e| ApiError(Error::Json(e)))?;
    blocking(store, move |s| s.answer(&id, &body.query_id, body.choice)).await
}

async fn terminate(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<SessionStatus> {
    blocking(store, move |s| s.terminate(&id)).await
}

async fn media(State(store): State<Arc<SessionStore>>, Path(hash): Path<String>) -> Response {
    let Some(path): Option<PathBuf> = store.media_path(&hash) else {
        return (
            StatusCode::NOT_FOUND,
            Json(ErrorBody { error: format!("no media `{hash}`"), code: "unknown_media".into() }),
        )
            .into_response();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, store.media_type().to_string())], bytes).into_response(),
        Err(e) => ApiError(Error::Io(e)).into_response(),
    }
}
