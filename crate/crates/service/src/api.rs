//! HTTP/JSON binding of the engine.

use std::collections::HashMap;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use journal_core::engine::{Engine, EngineError, SessionState};
use journal_core::memory::{classify_term, memory_strength, MemoryFragment, MemoryTerm, Timestamp};
use journal_core::store::FragmentFilter;
use serde::Serialize;
use serde_json::{json, Value};

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        Timestamp(ms)
    }
}

/// Virtual clock for tests and scripted runs.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(at: Timestamp) -> Self {
        Self(AtomicI64::new(at.0))
    }

    pub fn set(&self, at: Timestamp) {
        self.0.store(at.0, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.load(Ordering::SeqCst))
    }
}

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub clock: Arc<dyn Clock>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>, field: Option<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                field,
            },
        }
    }

    fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_argument", message, Some(field.to_string()))
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::InvalidArgument { field, .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalid_argument", message, field)
            }
            EngineError::NotFound { .. } => ApiError::new(StatusCode::NOT_FOUND, "not_found", message, None),
            EngineError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "conflict", message, None),
            EngineError::InvalidState(_) => ApiError::new(StatusCode::CONFLICT, "invalid_state", message, None),
            EngineError::Provider(_) => ApiError::new(StatusCode::BAD_GATEWAY, "provider_error", message, None),
            EngineError::Storage(_) => {
                log::error!("{message}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", message, None)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

/// Runs engine work off the async executor.
async fn blocking<T: Serialize + Send + 'static>(
    status: StatusCode,
    f: impl FnOnce() -> Result<T, EngineError> + Send + 'static,
) -> ApiResult {
    let out = tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None))??;
    Ok((status, Json(out)).into_response())
}

fn json_body(body: &Bytes) -> Result<Value, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(Value::Null);
    }
    serde_json::from_slice(body).map_err(|e| ApiError::invalid("body", format!("malformed JSON: {e}")))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/users", post(create_user))
        .route("/users/{id}/preferences", get(get_preferences).put(put_preferences))
        .route("/users/{id}/sessions", post(open_session))
        .route("/users/{id}/diaries", get(list_diaries))
        .route("/users/{id}/memories", get(list_memories))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/close", post(close_session))
        .fallback(route_not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}

async fn route_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route", None)
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this route", None)
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn create_user(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let prefs = json_body(&body)?;
    let now = s.clock.now();
    blocking(StatusCode::CREATED, move || s.engine.create_user(&prefs, now)).await
}

async fn get_preferences(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    blocking(StatusCode::OK, move || s.engine.get_preferences(&id)).await
}

async fn put_preferences(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let prefs = json_body(&body)?;
    blocking(StatusCode::OK, move || s.engine.put_preferences(&id, &prefs)).await
}

#[derive(Serialize)]
struct SessionView {
    session_id: String,
    user_id: String,
    state: SessionState,
    opened_at: Timestamp,
}

async fn open_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let now = s.clock.now();
    blocking(StatusCode::CREATED, move || {
        let session = s.engine.open_session(&id, now)?;
        Ok(SessionView {
            session_id: session.session_id,
            user_id: session.user_id,
            state: session.state,
            opened_at: session.opened_at,
        })
    })
    .await
}

async fn post_message(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let body = json_body(&body)?;
    let text = match body.get("text") {
        Some(Value::String(t)) => t.clone(),
        Some(_) => return Err(ApiError::invalid("text", "expected a string")),
        None => return Err(ApiError::invalid("text", "required")),
    };
    if let Some(extra) = body.as_object().and_then(|o| o.keys().find(|k| *k != "text")) {
        return Err(ApiError::invalid(extra, "unknown field"));
    }
    let now = s.clock.now();
    blocking(StatusCode::OK, move || s.engine.post_message(&id, &text, now)).await
}

async fn close_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let now = s.clock.now();
    blocking(StatusCode::OK, move || s.engine.close_session(&id, now)).await
}

fn parse_param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> Result<Option<T>, ApiError> {
    q.get(key)
        .map(|v| v.parse().map_err(|_| ApiError::invalid(key, format!("cannot parse `{v}`"))))
        .transpose()
}

async fn list_diaries(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let page = parse_param::<usize>(&q, "page")?.unwrap_or(1);
    let page_size = parse_param::<usize>(&q, "page_size")?.unwrap_or(10);
    let snapshot = parse_param::<usize>(&q, "snapshot")?;
    if page_size < 1 {
        return Err(ApiError::invalid("page_size", "must be at least 1"));
    }
    if page < 1 {
        return Err(ApiError::invalid("page", "must be at least 1"));
    }
    blocking(StatusCode::OK, move || {
        Ok(s.engine.store().list_diaries(&id, page, page_size, snapshot)?)
    })
    .await
}

#[derive(Serialize)]
struct MemoryView {
    #[serde(flatten)]
    fragment: MemoryFragment,
    strength: f64,
    term: MemoryTerm,
}

#[derive(Serialize)]
struct MemoriesResponse {
    user_id: String,
    now: Timestamp,
    memories: Vec<MemoryView>,
}

async fn list_memories(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let min_strength = parse_param::<f64>(&q, "min_strength")?;
    if min_strength.is_some_and(|m| !(0.0..=1.0).contains(&m)) {
        return Err(ApiError::invalid("min_strength", "must be within [0, 1]"));
    }
    let term = match q.get("term").map(String::as_str) {
        None => None,
        Some("short_term") => Some(MemoryTerm::ShortTerm),
        Some("long_term") => Some(MemoryTerm::LongTerm),
        Some(other) => return Err(ApiError::invalid("term", format!("expected short_term or long_term, got `{other}`"))),
    };
    let now = s.clock.now();
    blocking(StatusCode::OK, move || {
        let params = s.engine.config().params;
        let filter = FragmentFilter {
            min_strength,
            term,
            since: None,
        };
        let fragments = s.engine.store().get_fragments(&id, &filter, &params, now)?;
        let memories = fragments
            .into_iter()
            .filter(|f| f.created_at <= now)
            .map(|mut f| {
                let strength = memory_strength(&f, &params, now)?;
                let term = classify_term(&f, &params, now)?;
                f.embedding = None;
                Ok(MemoryView { fragment: f, strength, term })
            })
            .collect::<Result<Vec<_>, journal_core::memory::MemoryError>>()?;
        Ok(MemoriesResponse {
            user_id: id,
            now,
            memories,
        })
    })
    .await
}
