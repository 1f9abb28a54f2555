//! HTTP job service over the review engine.
//!
//! Endpoints:
//!
//! | Method | Path | |
//! | --- | --- | --- |
//! | POST | `/reviews` | submit `{repo_url, pr_number?, mode?, model_id?}`, 202 `{job_id}` |
//! | GET | `/reviews/{id}` | job snapshot |
//! | GET | `/reviews/{id}/events` | progress as server-sent events |
//! | GET | `/reviews/{id}/artifacts/{name}` | `review.json` or `review.md` |
//! | GET | `/health` | `{status, version}` |

pub mod jobs;
pub mod sse;
pub mod testing;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use repo_review::artifacts::{JSON_NAME, MARKDOWN_NAME};
use repo_review::{parse_repo_url, run_review, ReviewMode, RunDeps};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use jobs::{Job, JobState, JobView};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_CONCURRENT_JOBS: usize = 4;
pub const DEFAULT_CORS_ORIGIN: &str = "http://localhost:3000";
pub const DEFAULT_ARTIFACT_ROOT: &str = "./runs";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    /// Allowed browser origins; `*` allows any.
    pub cors_origins: Vec<String>,
    pub max_concurrent_jobs: usize,
    pub artifact_root: PathBuf,
    pub ping_interval: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            port: DEFAULT_PORT,
            cors_origins: vec![DEFAULT_CORS_ORIGIN.to_string()],
            max_concurrent_jobs: DEFAULT_MAX_CONCURRENT_JOBS,
            artifact_root: PathBuf::from(DEFAULT_ARTIFACT_ROOT),
            ping_interval: Duration::from_secs(15),
        }
    }
}

impl ServiceConfig {
    /// Defaults overridden by PORT, CORS_ORIGINS (comma-separated),
    /// MAX_CONCURRENT_JOBS and ARTIFACT_ROOT.
    pub fn from_env() -> Result<Self, String> {
        let mut c = ServiceConfig::default();
        if let Ok(v) = std::env::var("PORT") {
            c.port = v.parse().map_err(|_| format!("PORT must be a port number, got {v:?}"))?;
        }
        if let Ok(v) = std::env::var("CORS_ORIGINS") {
            c.cors_origins = parse_origins(&v);
        }
        if let Ok(v) = std::env::var("MAX_CONCURRENT_JOBS") {
            c.max_concurrent_jobs = v
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| format!("MAX_CONCURRENT_JOBS must be a positive integer, got {v:?}"))?;
        }
        if let Ok(v) = std::env::var("ARTIFACT_ROOT") {
            c.artifact_root = PathBuf::from(v);
        }
        Ok(c)
    }
}

pub fn parse_origins(list: &str) -> Vec<String> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

type IdGen = Box<dyn Fn() -> String + Send + Sync>;

/// Shared service state: the job table plus the template every job's deps
/// are derived from.
pub struct AppState {
    base: RunDeps,
    config: ServiceConfig,
    jobs: RwLock<HashMap<String, Arc<Job>>>,
    active: Mutex<usize>,
    next_id: IdGen,
}

impl AppState {
    pub fn new(base: RunDeps, config: ServiceConfig) -> Self {
        AppState {
            base,
            config,
            jobs: RwLock::new(HashMap::new()),
            active: Mutex::new(0),
            next_id: Box::new(|| uuid::Uuid::new_v4().simple().to_string()),
        }
    }

    /// Replaces the random job id generator.
    pub fn with_id_generator(mut self, f: impl Fn() -> String + Send + Sync + 'static) -> Self {
        self.next_id = Box::new(f);
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn job(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs.read().unwrap().get(id).cloned()
    }
}

#[derive(Debug, Deserialize)]
struct SubmitBody {
    repo_url: Option<String>,
    pr_number: Option<u64>,
    mode: Option<String>,
    model_id: Option<String>,
}

fn bad_request(field: Option<&str>, message: impl Into<String>) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({ "error": message.into(), "field": field })),
    )
        .into_response()
}

fn not_found(what: &str) -> Response {
    (StatusCode::NOT_FOUND, Json(json!({ "error": format!("{what} not found") }))).into_response()
}

async fn submit(State(state): State<Arc<AppState>>, body: axum::body::Bytes) -> Response {
    let body: SubmitBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return bad_request(None, format!("invalid JSON body: {e}")),
    };
    let Some(url) = body.repo_url else {
        return bad_request(Some("repo_url"), "repo_url is required");
    };
    if body.pr_number == Some(0) {
        return bad_request(Some("pr_number"), "pr_number must be a positive integer");
    }
    let source = match parse_repo_url(&url, body.pr_number) {
        Ok(s) => s,
        Err(e) => return bad_request(Some("repo_url"), e.to_string()),
    };
    let mode = match body.mode.as_deref() {
        None => ReviewMode::Full,
        Some(m) => match m.parse::<ReviewMode>() {
            Ok(m) => m,
            Err(e) => return bad_request(Some("mode"), e.to_string()),
        },
    };
    let model_id = match body.model_id {
        Some(m) if m.trim().is_empty() => return bad_request(Some("model_id"), "model_id must be nonempty"),
        Some(m) => m,
        None => state.base.model_id.clone(),
    };

    let job = {
        let mut active = state.active.lock().unwrap();
        if *active >= state.config.max_concurrent_jobs {
            return (
                StatusCode::TOO_MANY_REQUESTS,
                Json(json!({ "error": format!("concurrent job limit ({}) reached", state.config.max_concurrent_jobs) })),
            )
                .into_response();
        }
        let mut jobs = state.jobs.write().unwrap();
        let mut id = (state.next_id)();
        while jobs.contains_key(&id) {
            id = (state.next_id)();
        }
        let job = Arc::new(Job::new(
            id.clone(),
            source,
            mode,
            model_id,
            state.base.clock.now(),
            state.config.artifact_root.join(&id),
        ));
        jobs.insert(id, job.clone());
        *active += 1;
        job
    };

    let worker_state = state.clone();
    let worker_job = job.clone();
    tokio::task::spawn_blocking(move || run_job(&worker_state, &worker_job));
    (StatusCode::ACCEPTED, Json(json!({ "job_id": job.id }))).into_response()
}

fn run_job(state: &AppState, job: &Arc<Job>) {
    job.mark_running();
    let mut deps = state.base.for_job(
        job.id.clone(),
        job.artifact_dir.clone(),
        Arc::new(jobs::JobSink(job.clone())),
    );
    deps.model_id = job.model_id.clone();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run_review(&job.source, job.mode, &deps)));
    let error = match result {
        Ok(Ok(_)) => None,
        Ok(Err(e)) => Some(e.to_string()),
        Err(_) => Some("internal error: review worker panicked".to_string()),
    };
    if let Some(e) = &error {
        log::warn!("job {} failed: {e}", job.id);
    }
    *state.active.lock().unwrap() -= 1;
    job.finish(state.base.clock.now(), error);
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.job(&id) {
        Some(job) => Json(job.view()).into_response(),
        None => not_found("job"),
    }
}

fn last_event_id(headers: &HeaderMap) -> u64 {
    headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

async fn events(State(state): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    let Some(job) = state.job(&id) else {
        return not_found("job");
    };
    let stream = sse::event_stream(job, last_event_id(&headers), state.config.ping_interval);
    Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, "text/event-stream")
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(stream))
        .expect("valid response")
}

async fn artifact(State(state): State<Arc<AppState>>, Path((id, name)): Path<(String, String)>) -> Response {
    let Some(job) = state.job(&id) else {
        return not_found("job");
    };
    let content_type = match name.as_str() {
        JSON_NAME => "application/json",
        MARKDOWN_NAME => "text/markdown",
        _ => return not_found("artifact"),
    };
    if job.state() != JobState::Succeeded {
        return (
            StatusCode::CONFLICT,
            Json(json!({ "error": format!("job is {:?}, artifacts are available once it succeeds", job.state()).to_lowercase() })),
        )
            .into_response();
    }
    match tokio::fs::read(job.artifact_dir.join(&name)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type)], bytes).into_response(),
        Err(_) => not_found("artifact"),
    }
}

async fn health() -> Response {
    Json(json!({ "status": "ok", "version": repo_review::VERSION })).into_response()
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE, header::HeaderName::from_static("last-event-id")]);
    if origins.iter().any(|o| o == "*") {
        return layer.allow_origin(AllowOrigin::any());
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    layer.allow_origin(AllowOrigin::list(list))
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = cors(&state.config.cors_origins);
    Router::new()
        .route("/reviews", post(submit))
        .route("/reviews/{id}", get(get_job))
        .route("/reviews/{id}/events", get(events))
        .route("/reviews/{id}/artifacts/{name}", get(artifact))
        .route("/health", get(health))
        .layer(cors)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
