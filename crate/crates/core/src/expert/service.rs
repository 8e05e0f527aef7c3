//! HTTP review service over recorded episodes and the memory bank.
//!
//! ```text
//! GET  /api/episodes                          -> [{id, seed, outcome, steps}]
//! GET  /api/episodes/:id                      -> full episode record
//! POST /api/episodes/:id/steps/:k/feedback    -> created (201) or existing (200) MemoryEntry
//! GET  /api/memory                            -> bank entries
//! ```

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{ingest_feedback, Author, ExpertError, ExpertFeedback};
use crate::harness::EpisodeStore;
use crate::llm::ChatBackend;
use crate::memory::{MemoryBank, MemoryError};
use crate::sim::MetaAction;

pub struct ReviewState {
    pub store: EpisodeStore,
    pub bank: Arc<MemoryBank>,
    pub backend: Arc<dyn ChatBackend>,
}

#[derive(Debug, Deserialize)]
struct FeedbackBody {
    #[serde(default)]
    expert_action: Option<MetaAction>,
    #[serde(default)]
    advice_text: String,
    author: Author,
}

struct ApiError(StatusCode, serde_json::Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<ExpertError> for ApiError {
    fn from(e: ExpertError) -> Self {
        let msg = e.to_string();
        match e {
            ExpertError::EpisodeNotFound(_) | ExpertError::StepOutOfRange { .. } => {
                ApiError(StatusCode::NOT_FOUND, json!({ "error": msg }))
            }
            ExpertError::InvalidFeedback(_) => {
                ApiError(StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": msg }))
            }
            ExpertError::Memory(MemoryError::ReflectionParse { raw_output, .. }) => ApiError(
                StatusCode::BAD_GATEWAY,
                json!({ "error": msg, "raw_output": raw_output }),
            ),
            ExpertError::Memory(MemoryError::ReflectionBackend(_)) => {
                ApiError(StatusCode::BAD_GATEWAY, json!({ "error": msg }))
            }
            _ => ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": msg })),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(
        StatusCode::INTERNAL_SERVER_ERROR,
        json!({ "error": e.to_string() }),
    )
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(internal)?
}

async fn list_episodes(State(s): State<Arc<ReviewState>>) -> Result<Response, ApiError> {
    let list = blocking(move || s.store.list().map_err(internal)).await?;
    Ok(Json(list).into_response())
}

async fn get_episode(
    State(s): State<Arc<ReviewState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let record = blocking(move || match s.store.load(&id) {
        Ok(Some(r)) => Ok(r),
        Ok(None) => Err(ExpertError::EpisodeNotFound(id).into()),
        Err(e) => Err(internal(e)),
    })
    .await?;
    Ok(Json(record).into_response())
}

async fn post_feedback(
    State(s): State<Arc<ReviewState>>,
    Path((id, step)): Path<(String, usize)>,
    Json(body): Json<FeedbackBody>,
) -> Result<Response, ApiError> {
    let feedback = ExpertFeedback {
        episode_id: id,
        step_index: step,
        expert_action: body.expert_action,
        advice_text: body.advice_text,
        author: body.author,
    };
    let (entry, created) = blocking(move || {
        ingest_feedback(&feedback, &s.store, &s.bank, s.backend.as_ref()).map_err(ApiError::from)
    })
    .await?;
    let status = if created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(entry)).into_response())
}

async fn get_memory(State(s): State<Arc<ReviewState>>) -> Json<Vec<crate::memory::MemoryEntry>> {
    Json((*s.bank.snapshot()).clone())
}

pub fn review_router(state: Arc<ReviewState>) -> Router {
    Router::new()
        .route("/api/episodes", get(list_episodes))
        .route("/api/episodes/:id", get(get_episode))
        .route("/api/episodes/:id/steps/:k/feedback", post(post_feedback))
        .route("/api/memory", get(get_memory))
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<ReviewState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "review service listening");
    axum::serve(listener, review_router(state)).await
}

/// [`serve`] on a fresh multi-threaded runtime, blocking the caller.
pub fn serve_blocking(addr: SocketAddr, state: Arc<ReviewState>) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(addr, state))
}
