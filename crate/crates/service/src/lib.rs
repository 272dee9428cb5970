//! HTTP front end for the reward engine.
//!
//! | endpoint | |
//! |---|---|
//! | `POST /v1/score` | `{kind, items: [{prompt_id, response}]}` to `{results: [...]}` |
//! | `POST /v1/precache` | multipart manifest plus page files; `?overwrite=true` replaces prompts |
//! | `GET /v1/health` | prompt set and backend readiness |
//! | `GET /v1/stats` | counters since start |
//!
//! Errors are JSON bodies `{error, message}` where `error` is a stable code.

pub mod config;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rar_core::config::ConfigError;
use rar_core::datastore::{
    build_precache, load_promptset, save_promptset, DatastoreError, DiscardReason, PageManifest, PrecacheOutcome,
};
use rar_core::rewards::{EngineStats, ScoreItem};
use rar_core::{PromptSet, RewardEngine, RewardKind, RewardResult, VerifierBackend};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use config::ServiceConfig;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

#[derive(Default)]
struct RequestCounters {
    score: AtomicU64,
    precache: AtomicU64,
    rejected: AtomicU64,
    items: AtomicU64,
}

pub struct AppState {
    config: ServiceConfig,
    engine: Arc<RewardEngine>,
    counters: RequestCounters,
    /// Serializes prompt-set updates.
    precache_lock: tokio::sync::Mutex<()>,
}

impl AppState {
    /// Load the prompt set (missing file: start empty) and build the backend
    /// named in the config.
    pub fn from_config(config: ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let set = initial_promptset(config.promptset.as_ref())?;
        let engine = RewardEngine::from_config(config.engine.clone(), set)?;
        Ok(Self::with_engine(config, engine))
    }

    pub fn with_backend(
        config: ServiceConfig,
        promptset: PromptSet,
        backend: Arc<dyn VerifierBackend>,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        let engine = RewardEngine::new(config.engine.clone(), promptset, backend)?;
        Ok(Self::with_engine(config, engine))
    }

    fn with_engine(config: ServiceConfig, engine: RewardEngine) -> Self {
        Self {
            config,
            engine: Arc::new(engine),
            counters: RequestCounters::default(),
            precache_lock: tokio::sync::Mutex::new(()),
        }
    }

    pub fn engine(&self) -> &Arc<RewardEngine> {
        &self.engine
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }
}

fn initial_promptset(path: Option<&PathBuf>) -> Result<PromptSet, DatastoreError> {
    match path {
        Some(p) if p.exists() => load_promptset(p),
        _ => Ok(PromptSet::new()),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/v1/score", post(score))
        .route("/v1/precache", post(precache))
        .route("/v1/health", get(health))
        .route("/v1/stats", get(stats))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serve until ctrl-c.
pub async fn run(config: ServiceConfig) -> Result<(), ServiceError> {
    let addr = config.listen.clone();
    let state = Arc::new(AppState::from_config(config)?);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServiceError::Bind { addr: addr.clone(), source })?;
    tracing::info!(
        listen = %addr,
        prompts = state.engine.promptset().len(),
        "reward service ready"
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

#[derive(Deserialize)]
struct ScoreRequest {
    kind: String,
    items: Vec<ScoreItem>,
}

/// One entry of `results`: a reward or an inline error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreOutcome {
    Ok(RewardResult),
    Err { error: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub results: Vec<ScoreOutcome>,
}

async fn score(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ScoreResponse>, ApiError> {
    let reject = |e: ApiError| {
        state.counters.rejected.fetch_add(1, Ordering::Relaxed);
        e
    };
    state.counters.score.fetch_add(1, Ordering::Relaxed);
    let req: ScoreRequest = serde_json::from_slice(&body)
        .map_err(|e| reject(ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", e.to_string())))?;
    let kind: RewardKind = req
        .kind
        .parse()
        .map_err(|e: rar_core::rewards::RewardError| reject(ApiError::new(StatusCode::BAD_REQUEST, e.code(), e.to_string())))?;
    if req.items.len() > state.config.max_batch {
        return Err(reject(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "batch_too_large",
            format!("{} items exceed max_batch {}", req.items.len(), state.config.max_batch),
        )));
    }
    if !state.engine.backend_ready() {
        return Err(reject(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "verifier_unavailable",
            "the verifier backend is not ready",
        )));
    }
    state.counters.items.fetch_add(req.items.len() as u64, Ordering::Relaxed);
    let engine = state.engine.clone();
    let results = tokio::task::spawn_blocking(move || engine.score_batch(&req.items, kind))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let results = results
        .into_iter()
        .map(|r| match r {
            Ok(v) => ScoreOutcome::Ok(v),
            Err(e) => ScoreOutcome::Err {
                error: e.code().to_string(),
                message: e.to_string(),
            },
        })
        .collect();
    Ok(Json(ScoreResponse { results }))
}

#[derive(Deserialize)]
struct PrecacheQuery {
    #[serde(default)]
    overwrite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltReport {
    pub prompt_id: String,
    pub documents: usize,
    pub version_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardedReport {
    pub prompt_id: String,
    pub reason: DiscardReason,
    pub surviving_documents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecacheReport {
    pub built: Vec<BuiltReport>,
    pub discarded: Vec<DiscardedReport>,
    /// Prompts in the served set after the update.
    pub prompts: usize,
}

fn bad_upload(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "manifest_error", message)
}

/// The manifest part is named `manifest`; every other part is a page file,
/// keyed by its file name (or the part name when there is none).
async fn read_upload(mut multipart: Multipart) -> Result<(PageManifest, HashMap<String, Vec<u8>>), ApiError> {
    let mut manifest = None;
    let mut pages = HashMap::new();
    while let Some(field) = multipart.next_field().await.map_err(|e| bad_upload(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let file = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(|e| bad_upload(e.body_text()))?;
        if name == "manifest" {
            let text = std::str::from_utf8(&bytes).map_err(|_| bad_upload("manifest is not UTF-8"))?;
            manifest = Some(PageManifest::parse(text).map_err(|e| bad_upload(e.to_string()))?);
        } else {
            pages.insert(file.unwrap_or(name), bytes.to_vec());
        }
    }
    let manifest = manifest.ok_or_else(|| bad_upload("missing manifest part"))?;
    Ok((manifest, pages))
}

fn storage_error(e: DatastoreError) -> ApiError {
    if e.is_storage_full() {
        ApiError::new(StatusCode::INSUFFICIENT_STORAGE, "storage_full", e.to_string())
    } else {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", e.to_string())
    }
}

async fn precache(
    State(state): State<Arc<AppState>>,
    query: Result<Query<PrecacheQuery>, axum::extract::rejection::QueryRejection>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<PrecacheReport>, ApiError> {
    state.counters.precache.fetch_add(1, Ordering::Relaxed);
    let result = precache_inner(&state, query, multipart).await;
    if result.is_err() {
        state.counters.rejected.fetch_add(1, Ordering::Relaxed);
    }
    result
}

async fn precache_inner(
    state: &Arc<AppState>,
    query: Result<Query<PrecacheQuery>, axum::extract::rejection::QueryRejection>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<PrecacheReport>, ApiError> {
    let Query(query) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_query", e.body_text()))?;
    let multipart = multipart.map_err(|e| bad_upload(e.body_text()))?;
    let (manifest, pages) = read_upload(multipart).await?;
    let resolved = manifest
        .resolve(|file| Ok(pages.get(file).cloned()))
        .map_err(|e| bad_upload(e.to_string()))?;

    let _guard = state.precache_lock.lock().await;
    let current = state.engine.promptset();
    if !query.overwrite {
        if let Some(p) = resolved.iter().find(|p| current.contains(&p.prompt_id)) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "duplicate_prompt",
                format!("prompt {:?} already exists; pass overwrite=true to replace it", p.prompt_id),
            ));
        }
    }

    let policy = state.config.precache;
    let path = state.config.promptset.clone();
    let work = move || -> Result<(PromptSet, PrecacheReport), ApiError> {
        let mut set = (*current).clone();
        let mut built = Vec::new();
        let mut discarded = Vec::new();
        for p in &resolved {
            match build_precache(&p.prompt_id, &p.prompt_text, p.reference_response.as_deref(), &p.pages, &policy) {
                PrecacheOutcome::Built(entry) => {
                    built.push(BuiltReport {
                        prompt_id: entry.prompt_id.clone(),
                        documents: entry.documents.len(),
                        version_hash: entry.version_hash.clone(),
                    });
                    set.upsert(entry);
                }
                PrecacheOutcome::Discarded(d) => discarded.push(DiscardedReport {
                    prompt_id: d.prompt_id,
                    reason: d.reason,
                    surviving_documents: d.surviving_documents,
                }),
            }
        }
        if let Some(path) = &path {
            save_promptset(&set, path).map_err(storage_error)?;
        }
        let prompts = set.len();
        Ok((set, PrecacheReport { built, discarded, prompts }))
    };
    let (set, report) = tokio::task::spawn_blocking(work)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    state.engine.replace_promptset(set);
    tracing::info!(built = report.built.len(), discarded = report.discarded.len(), "prompt set updated");
    Ok(Json(report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub prompts: usize,
    pub promptset_loaded: bool,
    pub backend_ready: bool,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let prompts = state.engine.promptset().len();
    Json(Health {
        status: "ok".into(),
        prompts,
        promptset_loaded: prompts > 0,
        backend_ready: state.engine.backend_ready(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    /// Requests per endpoint, and how many were rejected outright.
    pub requests: BTreeMap<String, u64>,
    /// Items received in accepted score requests.
    pub items: u64,
    #[serde(flatten)]
    pub engine: EngineStats,
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<Stats> {
    let c = &state.counters;
    let requests = [
        ("score", &c.score),
        ("precache", &c.precache),
        ("rejected", &c.rejected),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.load(Ordering::Relaxed)))
    .collect();
    Json(Stats {
        requests,
        items: c.items.load(Ordering::Relaxed),
        engine: state.engine.stats(),
    })
}
