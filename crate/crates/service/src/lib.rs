//! HTTP labeling service. A human acts as the oracle of an active-learning
//! run: the service serves the pending query batch, collects labels, and
//! retrains in the background when asked to advance.
//!
//! | Method | Path | Body | Reply |
//! |---|---|---|---|
//! | POST | `/api/sessions` | [`CreateRequest`] | 201 [`SessionView`] |
//! | GET | `/api/sessions` | | `[SessionView]` |
//! | GET | `/api/sessions/{id}` | | [`SessionView`] |
//! | GET | `/api/sessions/{id}/query` | | [`QueryView`] |
//! | POST | `/api/sessions/{id}/labels` | [`LabelRequest`] | [`LabelAck`] |
//! | POST | `/api/sessions/{id}/advance` | [`AdvanceRequest`] | 200 [`AdvanceView`] or 202 [`SessionView`] |
//! | GET | `/api/sessions/{id}/metrics` | | [`MetricsView`] |
//! | GET | `/api/sessions/{id}/projection` | | [`ProjectionView`] |
//! | GET | `/healthz` | | `{"status": "ok", "api_version": 1}` |
//!
//! Errors reply with `{"error": "..."}` and status 400 (bad input), 404
//! (unknown session), 409 (wrong session status) or 500.

mod pca;
mod session;

use std::collections::HashMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use activesvdd::{Label, RunConfig};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::RwLock;
use tower_http::services::{ServeDir, ServeFile};
use uuid::Uuid;

pub use pca::project_2d;
pub use session::{
    AdvanceView, MetricsView, PersistedSession, ProjectionView, QueryItem, QueryView, Session, SessionError,
    SessionSpec, SessionView, Status, API_VERSION,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("session {id}: {source}")]
    Restore {
        id: Uuid,
        #[source]
        source: SessionError,
    },
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("no session {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Conflict(m) => ApiError::Conflict(m),
            SessionError::Invalid(_) | SessionError::Data(_) => ApiError::BadRequest(e.to_string()),
            SessionError::Loop(activesvdd::LoopError::PoolExhausted { .. } | activesvdd::LoopError::Config(_)) => {
                ApiError::BadRequest(e.to_string())
            }
            SessionError::Loop(_) => ApiError::Internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    /// Where sessions are persisted; `None` keeps them in memory only.
    pub state_dir: Option<PathBuf>,
    /// Static files served at `/`, with `index.html` as fallback.
    pub ui_dir: Option<PathBuf>,
    /// Used when a create request carries no `config`.
    pub default_config: Option<RunConfig>,
}

type Handle = Arc<RwLock<Session>>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<Uuid, Handle>>,
}

impl AppState {
    /// Opens the state directory and replays every saved session.
    pub async fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let mut sessions = HashMap::new();
        if let Some(dir) = &config.state_dir {
            let saved = tokio::task::spawn_blocking({
                let dir = dir.clone();
                move || load_all(&dir)
            })
            .await
            .expect("loader panicked")?;
            for s in saved {
                let id = s.id;
                let session = tokio::task::spawn_blocking(move || Session::restore(s))
                    .await
                    .expect("restore panicked")
                    .map_err(|source| ServiceError::Restore { id, source })?;
                tracing::info!(%id, stage = session.snapshot.state.completed_stages(), "resumed session");
                sessions.insert(id, Arc::new(RwLock::new(session)));
            }
        }
        Ok(Self {
            inner: Arc::new(Inner {
                config,
                sessions: RwLock::new(sessions),
            }),
        })
    }

    pub async fn session_ids(&self) -> Vec<Uuid> {
        let mut ids: Vec<Uuid> = self.inner.sessions.read().await.keys().copied().collect();
        ids.sort();
        ids
    }

    async fn get(&self, id: &str) -> Result<Handle, ApiError> {
        let uuid = Uuid::parse_str(id).map_err(|_| ApiError::NotFound(id.to_string()))?;
        self.inner
            .sessions
            .read()
            .await
            .get(&uuid)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    async fn persist(&self, session: &Session) -> Result<(), ApiError> {
        let Some(dir) = &self.inner.config.state_dir else {
            return Ok(());
        };
        let saved = session.persisted();
        let dir = dir.clone();
        tokio::task::spawn_blocking(move || save(&dir, &saved))
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))?
            .map_err(|e| ApiError::Internal(e.to_string()))
    }

    /// Writes every session to the state directory.
    pub async fn persist_all(&self) -> Result<(), ApiError> {
        let handles: Vec<Handle> = self.inner.sessions.read().await.values().cloned().collect();
        for h in handles {
            let s = h.read().await;
            self.persist(&s).await?;
        }
        Ok(())
    }
}

const SESSION_SUFFIX: &str = ".session.json";

fn save(dir: &Path, saved: &PersistedSession) -> Result<(), ServiceError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ServiceError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(format!("{}{SESSION_SUFFIX}", saved.id));
    let tmp = path.with_extension("tmp");
    let text = serde_json::to_vec_pretty(saved).expect("session serializes");
    std::fs::write(&tmp, text).map_err(io(&tmp))?;
    std::fs::rename(&tmp, &path).map_err(io(&path))
}

fn load_all(dir: &Path) -> Result<Vec<PersistedSession>, ServiceError> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(ServiceError::Io {
                path: dir.to_path_buf(),
                source,
            })
        }
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(SESSION_SUFFIX))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text = std::fs::read(&path).map_err(|source| ServiceError::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_slice(&text).map_err(|source| ServiceError::Corrupt { path, source })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    /// Run configuration; falls back to the server default.
    #[serde(default)]
    pub config: Option<RunConfig>,
    /// Defaults to the first of `config.seeds`.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Record AUC from the dataset's label column (simulation-assist mode).
    #[serde(default = "yes")]
    pub ground_truth: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub index: usize,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub api_version: u32,
    pub index: usize,
    pub label: Label,
    pub received: usize,
    pub budget: usize,
    pub ready: bool,
    pub status: Status,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvanceRequest {
    /// Wait for retraining and reply with the stage record.
    #[serde(default)]
    pub wait: bool,
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/sessions", post(create_session).get(list_sessions))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/query", get(get_query))
        .route("/api/sessions/{id}/labels", post(post_label))
        .route("/api/sessions/{id}/advance", post(advance))
        .route("/api/sessions/{id}/metrics", get(get_metrics))
        .route("/api/sessions/{id}/projection", get(get_projection));
    let api = match &state.inner.config.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(dir.join("index.html")))),
        None => api,
    };
    api.with_state(state)
}

/// Serves until `shutdown` resolves, then persists every session.
pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    state.persist_all().await.map_err(std::io::Error::other)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "api_version": API_VERSION }))
}

/// An absent or empty body reads as `{}`.
fn optional_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let text: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(text).map_err(|e| ApiError::BadRequest(format!("request body: {e}")))
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req: CreateRequest = optional_body(&body)?;
    let mut config = req
        .config
        .or_else(|| app.inner.config.default_config.clone())
        .ok_or_else(|| ApiError::BadRequest("no `config` given and the server has no default".into()))?;
    config.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
    if let Some(ds) = config.dataset.as_mut() {
        ds.path = std::path::absolute(&ds.path).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    }
    let seed = req.seed.unwrap_or(config.seeds[0]);
    let spec = SessionSpec {
        config,
        seed,
        ground_truth: req.ground_truth,
    };
    let id = Uuid::new_v4();
    let session = tokio::task::spawn_blocking(move || Session::create(id, spec))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    app.persist(&session).await?;
    let view = session.view();
    app.inner.sessions.write().await.insert(id, Arc::new(RwLock::new(session)));
    tracing::info!(%id, "created session");
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_sessions(State(app): State<AppState>) -> Json<Vec<SessionView>> {
    let mut out = Vec::new();
    for id in app.session_ids().await {
        if let Ok(h) = app.get(&id.to_string()).await {
            out.push(h.read().await.view());
        }
    }
    Json(out)
}

async fn get_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(app.get(&id).await?.read().await.view()))
}

async fn get_query(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<QueryView>, ApiError> {
    Ok(Json(app.get(&id).await?.read().await.query_view()?))
}

async fn get_metrics(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<MetricsView>, ApiError> {
    Ok(Json(app.get(&id).await?.read().await.metrics_view()))
}

async fn get_projection(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ProjectionView>, ApiError> {
    Ok(Json(app.get(&id).await?.read().await.projection_view()))
}

async fn post_label(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<LabelRequest>,
) -> Result<Json<LabelAck>, ApiError> {
    let handle = app.get(&id).await?;
    let mut session = handle.write().await;
    session.label(req.index, req.label)?;
    app.persist(&session).await?;
    let status = session.status();
    Ok(Json(LabelAck {
        api_version: API_VERSION,
        index: req.index,
        label: req.label,
        received: session.received.len(),
        budget: session.snapshot.pending.len(),
        ready: status == Status::Ready,
        status,
    }))
}

async fn advance(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let wait = optional_body::<AdvanceRequest>(&body)?.wait;
    let handle = app.get(&id).await?;
    let (data, state, answers) = {
        let mut session = handle.write().await;
        let answers = session.answers()?;
        session.busy = true;
        (session.data.clone(), session.snapshot.state.clone(), answers)
    };
    let job = {
        let app = app.clone();
        let handle = handle.clone();
        tokio::spawn(async move {
            let stage_answers = answers.clone();
            let result = tokio::task::spawn_blocking(move || session::run_stage(&data, state, &stage_answers))
                .await
                .unwrap_or_else(|e| Err(SessionError::Conflict(format!("retraining panicked: {e}"))));
            let mut session = handle.write().await;
            match result {
                Ok((snapshot, record)) => {
                    session.finish_stage(answers, snapshot);
                    app.persist(&session).await?;
                    tracing::info!(id = %session.id, stage = record.stage, "stage complete");
                    Ok(AdvanceView {
                        api_version: API_VERSION,
                        record,
                        query: session.query_view()?,
                    })
                }
                Err(e) => {
                    session.busy = false;
                    session.last_error = Some(e.to_string());
                    Err(ApiError::from(e))
                }
            }
        })
    };
    if wait {
        let view = job.await.map_err(|e| ApiError::Internal(e.to_string()))??;
        Ok(Json(view).into_response())
    } else {
        let view = handle.read().await.view();
        Ok((StatusCode::ACCEPTED, Json(view)).into_response())
    }
}
