//! HTTP and SSE front end over a [`SessionManager`].

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use recallgraph_core::actuator::ActuationCommand;
use recallgraph_core::memory::MemoryError;
use recallgraph_core::session::{SessionError, SessionManager, SessionQuery, Snapshot};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

const CHANNEL_CAPACITY: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct Update {
    pub snapshot: Snapshot,
    pub commands: Vec<ActuationCommand>,
}

#[derive(Clone)]
pub struct AppState {
    manager: Arc<SessionManager>,
    channels: Arc<Mutex<HashMap<String, broadcast::Sender<Arc<Update>>>>>,
}

impl AppState {
    pub fn new(manager: Arc<SessionManager>) -> Self {
        Self {
            manager,
            channels: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    fn sender(&self, id: &str) -> broadcast::Sender<Arc<Update>> {
        self.channels
            .lock()
            .expect("channel map lock")
            .entry(id.to_string())
            .or_insert_with(|| broadcast::channel(CHANNEL_CAPACITY).0)
            .clone()
    }
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/episodes", get(list_episodes).post(record_episode))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/events", post(post_events))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(AppState::new(manager))
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownSession(_) | SessionError::NoMatchingEpisode => StatusCode::NOT_FOUND,
            SessionError::Memory(MemoryError::NotFound(_)) => StatusCode::NOT_FOUND,
            SessionError::Memory(MemoryError::DuplicateId(_)) => StatusCode::CONFLICT,
            SessionError::Memory(MemoryError::EmptyQuery | MemoryError::InvalidEpisode(_)) => StatusCode::BAD_REQUEST,
            SessionError::Memory(_) => StatusCode::INTERNAL_SERVER_ERROR,
            SessionError::EmptyRecording | SessionError::Stream(_) | SessionError::Perception(_) => {
                StatusCode::BAD_REQUEST
            }
            SessionError::Reasoning(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Harness(_) => StatusCode::BAD_REQUEST,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    }
}

async fn list_episodes(State(st): State<AppState>) -> impl IntoResponse {
    Json(st.manager.list_episodes())
}

#[derive(Debug, Deserialize)]
struct RecordParams {
    title: String,
    #[serde(default)]
    location: String,
}

async fn record_episode(
    State(st): State<AppState>,
    Query(params): Query<RecordParams>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let manager = st.manager.clone();
    let meta = tokio::task::spawn_blocking(move || manager.ingest_recording(&body, &params.title, &params.location))
        .await
        .map_err(join_error)??;
    Ok((StatusCode::CREATED, Json(meta)))
}

/// Accepts either a JSON object or `key: value` lines
/// (`keywords`, `location`, `episode_id`, `k`).
pub fn parse_query(body: &[u8]) -> Result<SessionQuery, String> {
    let text = std::str::from_utf8(body).map_err(|e| format!("query is not UTF-8: {e}"))?;
    let trimmed = text.trim();
    if trimmed.starts_with('{') {
        return serde_json::from_str(trimmed).map_err(|e| format!("invalid query: {e}"));
    }
    let mut q = SessionQuery::default();
    for (i, line) in trimmed.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| format!("line {}: expected `key: value`", i + 1))?;
        let value = value.trim();
        match key.trim() {
            "keywords" => q.keywords.extend(value.split_whitespace().map(str::to_string)),
            "location" => q.location = Some(value.to_string()),
            "episode_id" => q.episode_id = Some(value.to_string()),
            "k" => {
                q.k = Some(
                    value
                        .parse()
                        .map_err(|_| format!("line {}: k must be an integer", i + 1))?,
                )
            }
            other => return Err(format!("line {}: unknown key {other:?}", i + 1)),
        }
    }
    Ok(q)
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let query = parse_query(&body).map_err(ApiError::bad_request)?;
    let outcome = st.manager.create_session(&query)?;
    let status = if outcome.session.is_some() {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(outcome)).into_response())
}

async fn post_events(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let manager = st.manager.clone();
    let sid = id.clone();
    let result = tokio::task::spawn_blocking(move || manager.ingest_events(&sid, &body))
        .await
        .map_err(join_error)??;
    let update = Update {
        snapshot: result.snapshot.clone(),
        commands: result.commands.clone(),
    };
    // No subscribers is not an error.
    let _ = st.sender(&id).send(Arc::new(update));
    Ok(Json(result))
}

async fn get_state(State(st): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(st.manager.snapshot(&id)?))
}

fn event_of(update: &Update) -> Event {
    Event::default()
        .event("update")
        .data(serde_json::to_string(update).expect("update serializes"))
}

async fn stream(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = st.sender(&id).subscribe();
    let first = Update {
        snapshot: st.manager.snapshot(&id)?,
        commands: Vec::new(),
    };
    let rest = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(u) => return Some((Ok(event_of(&u)), rx)),
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("stream subscriber lagged by {n} updates"),
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let events = stream::once(async move { Ok(event_of(&first)) }).chain(rest);
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
