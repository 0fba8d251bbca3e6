//! HTTP/JSON front end over the session engine.
//!
//! Sessions live in memory only and are evicted after an idle period; a
//! restart loses them. Requests against one session are serialized by a
//! per-session lock, while different sessions proceed concurrently.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query as UrlQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Error;
use crate::provider::EmbeddingProvider;
use crate::session::{start_session, FinetuneOutcome, Judgment, Modality, Query, ResultPage, Session};
use crate::store::Corpus;
use crate::svm::SvmConfig;

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(60 * 60);

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::NotFound(_) => Self::not_found(message),
            Error::ProviderUnavailable(_) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "provider_unavailable", message)
            }
            Error::Provider(_) | Error::Io(_) | Error::Csv(_) => Self::internal(message),
            Error::Parse { .. }
            | Error::DuplicateId(_)
            | Error::DimensionMismatch { .. }
            | Error::ZeroVector(_)
            | Error::Domain(_)
            | Error::NotInPool(_)
            | Error::Config(_) => Self::bad_request(message),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Slot {
    session: Mutex<Session>,
    last_used: Mutex<Instant>,
}

pub struct ServiceConfig {
    pub corpus: Arc<Corpus>,
    pub provider: Arc<dyn EmbeddingProvider>,
    pub svm: SvmConfig,
    pub retrieval_limit: usize,
    pub idle_timeout: Duration,
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<ServiceConfig>,
    sessions: Arc<Mutex<HashMap<String, Arc<Slot>>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config: Arc::new(config),
            sessions: Arc::default(),
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Drops sessions idle for longer than the configured timeout.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let idle = self.config.idle_timeout;
        let mut sessions = self.sessions.lock().unwrap();
        let before = sessions.len();
        sessions.retain(|_, slot| now.duration_since(*slot.last_used.lock().unwrap()) <= idle);
        before - sessions.len()
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Slot>> {
        let slot = self
            .sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("session `{id}`")))?;
        *slot.last_used.lock().unwrap() = Instant::now();
        Ok(slot)
    }

    /// Runs `f` on the session from a blocking worker thread.
    async fn with_session<T, F>(&self, id: &str, f: F) -> ApiResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session, &ServiceConfig) -> ApiResult<T> + Send + 'static,
    {
        let slot = self.slot(id)?;
        let config = self.config.clone();
        tokio::task::spawn_blocking(move || {
            let mut session = slot.session.lock().unwrap_or_else(|p| p.into_inner());
            f(&mut session, &config)
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/results", get(results))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/finetune", post(finetune))
        .route("/images/{id}", get(image))
        .with_state(state)
}

/// Serves until `shutdown` resolves, sweeping idle sessions periodically.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = {
        let state = state.clone();
        let every = (state.config.idle_timeout / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                let evicted = state.evict_idle(Instant::now());
                if evicted > 0 {
                    log::info!("evicted {evicted} idle sessions");
                }
            }
        })
    };
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await;
    sweeper.abort();
    result
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryBody {
    modality: Modality,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    image_id: Option<String>,
    #[serde(default)]
    image_base64: Option<String>,
    #[serde(default)]
    prefix_enabled: bool,
}

impl QueryBody {
    fn into_query(self) -> ApiResult<Query> {
        let query = match (self.modality, self.text, self.image_id, self.image_base64) {
            (Modality::Text, Some(text), None, None) => Query::text(text, self.prefix_enabled),
            (Modality::Image, None, Some(id), None) => Query::image_id(id),
            (Modality::Image, None, None, Some(data)) => Query::image_bytes(
                base64::engine::general_purpose::STANDARD
                    .decode(data)
                    .map_err(|e| ApiError::bad_request(format!("image_base64: {e}")))?,
            ),
            _ => {
                return Err(ApiError::bad_request(
                    "query needs exactly one of text, image_id or image_base64, matching modality",
                ))
            }
        };
        query.validate()?;
        Ok(query)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    query: QueryBody,
    #[serde(default)]
    page_size: Option<usize>,
}

#[derive(Serialize)]
struct CreateResponse {
    session_id: String,
    round: u32,
    page: ResultPage,
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CreateResponse>)> {
    let Json(body) = body?;
    let page_size = body.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    let query = body.query.into_query()?;
    let config = state.config.clone();
    let session = tokio::task::spawn_blocking(move || {
        start_session(query, &config.corpus, config.provider.as_ref(), config.retrieval_limit)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    let response = CreateResponse {
        session_id: session.id().to_owned(),
        round: session.round(),
        page: session.get_results(0, page_size),
    };
    state.sessions.lock().unwrap().insert(
        session.id().to_owned(),
        Arc::new(Slot {
            session: Mutex::new(session),
            last_used: Mutex::new(Instant::now()),
        }),
    );
    Ok((StatusCode::CREATED, Json(response)))
}

async fn session_summary(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let summary = state
        .with_session(&id, |s, _| {
            Ok(json!({
                "session_id": s.id(),
                "round": s.round(),
                "total": s.current_ranking().len(),
                "judgments": s.judgments().len(),
            }))
        })
        .await?;
    Ok(Json(summary))
}

#[derive(Deserialize)]
struct PageParams {
    #[serde(default)]
    offset: usize,
    #[serde(default)]
    limit: Option<usize>,
}

async fn results(
    State(state): State<AppState>,
    Path(id): Path<String>,
    params: Result<UrlQuery<PageParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Json<ResultPage>> {
    let UrlQuery(params) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let limit = params.limit.unwrap_or(DEFAULT_PAGE_SIZE);
    if limit == 0 {
        return Err(ApiError::bad_request("limit must be at least 1"));
    }
    let page = state
        .with_session(&id, move |s, _| Ok(s.get_results(params.offset, limit)))
        .await?;
    Ok(Json(page))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    judgments: Vec<Judgment>,
}

async fn feedback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackBody>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(body) = body?;
    let accepted = state
        .with_session(&id, move |s, _| Ok(s.submit_feedback(&body.judgments)?))
        .await?;
    Ok(Json(json!({ "accepted_count": accepted })))
}

#[derive(Serialize)]
struct FinetuneResponse {
    round: u32,
    outcome: FinetuneOutcome,
    page: ResultPage,
}

async fn finetune(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<FinetuneResponse>> {
    let response = state
        .with_session(&id, |s, config| {
            let outcome = s.finetune(&config.corpus, &config.svm)?;
            Ok(FinetuneResponse {
                round: s.round(),
                outcome,
                page: s.get_results(0, DEFAULT_PAGE_SIZE),
            })
        })
        .await?;
    Ok(Json(response))
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

fn placeholder_svg(id: &str) -> String {
    let escaped: String = id
        .chars()
        .map(|c| match c {
            '<' => "&lt;".into(),
            '>' => "&gt;".into(),
            '&' => "&amp;".into(),
            '"' => "&quot;".into(),
            c => c.to_string(),
        })
        .collect();
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="224" height="224"><rect width="100%" height="100%" fill="#ddd"/><text x="50%" y="50%" text-anchor="middle" font-family="sans-serif" font-size="14">{escaped}</text></svg>"##
    )
}

async fn image(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let record = state
        .config
        .corpus
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("image `{id}`")))?;
    match &record.media_path {
        Some(path) => {
            let bytes = tokio::fs::read(path)
                .await
                .map_err(|e| ApiError::not_found(format!("media for `{id}`: {e}")))?;
            Ok(([(header::CONTENT_TYPE, content_type(path))], bytes).into_response())
        }
        None => Ok(([(header::CONTENT_TYPE, "image/svg+xml")], placeholder_svg(&id)).into_response()),
    }
}
