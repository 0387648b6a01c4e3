//! HTTP session service. Sessions live in memory behind per-session locks and
//! are written through to one JSON file each under the data directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fr_design::rng::mix_seed;
use fr_design::sequential::{
    ExperimentRecord, ModelSnapshot, Proposal, Session, SessionConfig, SessionFile, SessionStatus,
};
use fr_design::Error as EngineError;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

const SESSIONS_DIR: &str = "sessions";
const COUNTER_FILE: &str = "next_session";

/// Error body: `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug)]
pub struct ApiError {
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

    fn unknown(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown-session",
            format!("no session `{id}`"),
        )
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        match e {
            EngineError::ObservationOutOfRange { .. } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "observation-out-of-range",
                msg,
            ),
            EngineError::DesignOutOfGrid(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "design-out-of-grid", msg)
            }
            EngineError::SessionComplete(_) => {
                Self::new(StatusCode::CONFLICT, "session-complete", msg)
            }
            EngineError::Config(_) | EngineError::InvalidParameter(_) => {
                Self::new(StatusCode::BAD_REQUEST, "invalid-config", msg)
            }
            EngineError::DegenerateUpdate { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "engine-degenerate", msg)
            }
            _ => Self::internal(msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub id: String,
    pub status: SessionStatus,
    /// Milliseconds since the Unix epoch.
    pub created_ms: u64,
    pub updated_ms: u64,
    pub experiments_planned: usize,
    pub experiments_done: usize,
}

/// A session as stored on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct StoredSession {
    id: String,
    created_ms: u64,
    updated_ms: u64,
    session: SessionFile<f64>,
}

struct Entry {
    id: String,
    created_ms: u64,
    updated_ms: u64,
    session: Session<f64>,
}

impl Entry {
    fn handle(&self) -> SessionHandle {
        SessionHandle {
            id: self.id.clone(),
            status: self.session.status(),
            created_ms: self.created_ms,
            updated_ms: self.updated_ms,
            experiments_planned: self.session.config().experiments,
            experiments_done: self.session.records().len(),
        }
    }
}

/// On-disk session directory with an in-memory cache.
pub struct Store {
    dir: PathBuf,
    sessions: Mutex<HashMap<String, Arc<Mutex<Entry>>>>,
    counter: AtomicU64,
    clock: Clock,
}

/// Source of timestamps in milliseconds.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

impl Store {
    /// Opens (creating if needed) `data_dir` and loads every stored session.
    pub fn open(data_dir: &Path) -> anyhow::Result<Self> {
        let dir = data_dir.join(SESSIONS_DIR);
        std::fs::create_dir_all(&dir)?;
        let counter = match std::fs::read_to_string(data_dir.join(COUNTER_FILE)) {
            Ok(s) => s.trim().parse()?,
            Err(_) => 0,
        };
        let mut sessions = HashMap::new();
        for item in std::fs::read_dir(&dir)? {
            let path = item?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let stored: StoredSession = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            let session = Session::from_file(stored.session)?;
            let entry = Entry {
                id: stored.id.clone(),
                created_ms: stored.created_ms,
                updated_ms: stored.updated_ms,
                session,
            };
            sessions.insert(stored.id, Arc::new(Mutex::new(entry)));
        }
        log::info!("loaded {} sessions from {}", sessions.len(), dir.display());
        Ok(Self {
            dir,
            sessions: Mutex::new(sessions),
            counter: AtomicU64::new(counter),
            clock: Arc::new(now_ms),
        })
    }

    /// Replaces the wall clock, e.g. with a logical one for replay tests.
    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    fn now(&self) -> u64 {
        (self.clock)()
    }

    fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn persist(&self, e: &Entry) -> ApiResult<()> {
        let stored = StoredSession {
            id: e.id.clone(),
            created_ms: e.created_ms,
            updated_ms: e.updated_ms,
            session: e.session.to_file(true),
        };
        let text =
            serde_json::to_string(&stored).map_err(|err| ApiError::internal(err.to_string()))?;
        let path = self.path_of(&e.id);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, &path))
            .map_err(|err| ApiError::internal(format!("{}: {err}", path.display())))
    }

    fn get(&self, id: &str) -> ApiResult<Arc<Mutex<Entry>>> {
        self.sessions
            .lock()
            .map_err(|_| ApiError::internal("session map poisoned"))?
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown(id))
    }

    /// Ids are derived from the session seed and a creation counter, so a
    /// fresh service given the same requests hands out the same ids.
    fn next_id(&self, seed: u64) -> ApiResult<String> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let counter_path = self.dir.parent().unwrap_or(&self.dir).join(COUNTER_FILE);
        std::fs::write(&counter_path, (n + 1).to_string())
            .map_err(|e| ApiError::internal(format!("{}: {e}", counter_path.display())))?;
        Ok(format!("{:016x}", mix_seed(seed, &[n])))
    }

    fn create(&self, config: SessionConfig) -> ApiResult<SessionHandle> {
        let session = Session::<f64>::new(config)?;
        let id = self.next_id(session.config().seed)?;
        let t = self.now();
        let entry = Entry {
            id: id.clone(),
            created_ms: t,
            updated_ms: t,
            session,
        };
        self.persist(&entry)?;
        let handle = entry.handle();
        self.sessions
            .lock()
            .map_err(|_| ApiError::internal("session map poisoned"))?
            .insert(id, Arc::new(Mutex::new(entry)));
        Ok(handle)
    }

    fn delete(&self, id: &str) -> ApiResult<()> {
        let removed = self
            .sessions
            .lock()
            .map_err(|_| ApiError::internal("session map poisoned"))?
            .remove(id);
        let entry = removed.ok_or_else(|| ApiError::unknown(id))?;
        // Wait for in-flight work on the session before removing its file.
        let _guard = entry.lock();
        match std::fs::remove_file(self.path_of(id)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(ApiError::internal(e.to_string())),
        }
    }

    fn list(&self) -> ApiResult<Vec<SessionHandle>> {
        let entries: Vec<Arc<Mutex<Entry>>> = self
            .sessions
            .lock()
            .map_err(|_| ApiError::internal("session map poisoned"))?
            .values()
            .cloned()
            .collect();
        let mut out = Vec::new();
        for e in entries {
            out.push(
                e.lock()
                    .map_err(|_| ApiError::internal("session poisoned"))?
                    .handle(),
            );
        }
        out.sort_by(|a, b| (a.created_ms, &a.id).cmp(&(b.created_ms, &b.id)));
        Ok(out)
    }
}

/// Runs `f` on the session under its lock, on the blocking pool.
async fn with_session<T, F>(store: &Arc<Store>, id: &str, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Store, &mut Entry) -> ApiResult<T> + Send + 'static,
{
    let entry = store.get(id)?;
    let store = Arc::clone(store);
    tokio::task::spawn_blocking(move || {
        let mut guard = entry
            .lock()
            .map_err(|_| ApiError::internal("session poisoned"))?;
        f(&store, &mut guard)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub handle: SessionHandle,
    pub config: SessionConfig,
    pub model_ids: Vec<u8>,
    pub model_probabilities: Vec<f64>,
    pub snapshots: Vec<ModelSnapshot>,
    pub pending: Option<Proposal>,
    pub stop_reason: Option<String>,
}

fn view(e: &Entry) -> SessionView {
    SessionView {
        handle: e.handle(),
        config: e.session.config().clone(),
        model_ids: e.session.model_ids(),
        model_probabilities: e.session.model_probs(),
        snapshots: e.session.snapshots(),
        pending: e.session.pending().cloned(),
        stop_reason: e.session.stop_reason().map(str::to_string),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApiWarning {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservationRequest {
    pub d: u32,
    pub n: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservationResponse {
    pub handle: SessionHandle,
    pub record: ExperimentRecord,
    pub model_ids: Vec<u8>,
    pub model_probabilities: Vec<f64>,
    pub snapshots: Vec<ModelSnapshot>,
    pub warnings: Vec<ApiWarning>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HistoryResponse {
    pub handle: SessionHandle,
    pub records: Vec<ExperimentRecord>,
}

async fn create_session(
    State(store): State<Arc<Store>>,
    body: Result<Json<SessionConfig>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionHandle>)> {
    let Json(config) =
        body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid-config", e.body_text()))?;
    let store2 = Arc::clone(&store);
    let handle = tokio::task::spawn_blocking(move || store2.create(config))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(handle)))
}

async fn list_sessions(State(store): State<Arc<Store>>) -> ApiResult<Json<Vec<SessionHandle>>> {
    Ok(Json(store.list()?))
}

async fn get_session(
    State(store): State<Arc<Store>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<SessionView>> {
    Ok(Json(with_session(&store, &id, |_, e| Ok(view(e))).await?))
}

async fn delete_session(
    State(store): State<Arc<Store>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<StatusCode> {
    let store2 = Arc::clone(&store);
    tokio::task::spawn_blocking(move || store2.delete(&id))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(StatusCode::NO_CONTENT)
}

/// Proposes the next design, computing the utility surface on first request
/// and serving the cached proposal afterwards.
async fn get_design(
    State(store): State<Arc<Store>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Proposal>> {
    let p = with_session(&store, &id, |store, e| {
        let fresh = e.session.pending().is_none();
        let p = e.session.propose_next_design()?.clone();
        if fresh {
            e.updated_ms = store.now();
            store.persist(e)?;
        }
        Ok(p)
    })
    .await?;
    Ok(Json(p))
}

async fn post_observation(
    State(store): State<Arc<Store>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<ObservationRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<ObservationResponse>> {
    let Json(obs) =
        body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid-request", e.body_text()))?;
    let out = with_session(&store, &id, move |store, e| {
        match e.session.status() {
            SessionStatus::AwaitingObservation => {}
            SessionStatus::AwaitingDesign => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "conflict",
                    "no design has been proposed yet; request one first",
                ))
            }
            SessionStatus::Complete => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "conflict",
                    "the session is complete",
                ))
            }
        }
        let record = e.session.record_observation(obs.d, obs.n)?.clone();
        e.updated_ms = store.now();
        store.persist(e)?;
        let warnings = record
            .warnings
            .iter()
            .map(|w| ApiWarning {
                code: "engine-degenerate".into(),
                message: w.clone(),
            })
            .collect();
        Ok(ObservationResponse {
            handle: e.handle(),
            model_ids: e.session.model_ids(),
            model_probabilities: record.model_probs.clone(),
            snapshots: record.snapshots.clone(),
            record,
            warnings,
        })
    })
    .await?;
    Ok(Json(out))
}

async fn get_history(
    State(store): State<Arc<Store>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<HistoryResponse>> {
    let h = with_session(&store, &id, |_, e| {
        Ok(HistoryResponse {
            handle: e.handle(),
            records: e.session.records().to_vec(),
        })
    })
    .await?;
    Ok(Json(h))
}

async fn defaults() -> Json<SessionConfig> {
    Json(SessionConfig::default())
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such endpoint")
}

/// The service's routes. Static files under `static_dir` are served for any
/// path outside `/api`.
pub fn router(store: Arc<Store>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/defaults", get(defaults))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/design", get(get_design))
        .route("/sessions/{id}/observations", post(post_observation))
        .route("/sessions/{id}/history", get(get_history))
        .fallback(not_found)
        .with_state(store);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => {
            app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true))
        }
        None => app,
    }
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(
    addr: std::net::SocketAddr,
    data_dir: &Path,
    static_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let store = Arc::new(Store::open(data_dir)?);
    if let Some(d) = &static_dir {
        log::info!("serving static files from {}", d.display());
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
