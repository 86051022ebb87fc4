//! HTTP session service.
//!
//! Each session sits behind its own lock, so updates to one session are
//! serialized while distinct sessions proceed in parallel. Planning work runs
//! on the blocking pool.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use anyhow::Context;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use petriplan_core::planner::PlannerOptions;
use petriplan_core::problem::parse_problem;
use petriplan_core::session::{outcome_json, parse_update, Session, SessionError};
use serde::Deserialize;
use serde_json::{json, Value};

type Shared = Arc<RwLock<Session>>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    sessions: RwLock<BTreeMap<String, Shared>>,
    next_id: Mutex<u64>,
    opts: PlannerOptions,
    data_dir: Option<PathBuf>,
    /// Journal records already on disk, per session.
    persisted: Mutex<BTreeMap<String, usize>>,
}

impl AppState {
    pub fn new(opts: PlannerOptions, data_dir: Option<PathBuf>) -> AppState {
        AppState {
            inner: Arc::new(Inner {
                sessions: RwLock::new(BTreeMap::new()),
                next_id: Mutex::new(1),
                opts,
                data_dir,
                persisted: Mutex::new(BTreeMap::new()),
            }),
        }
    }

    /// Restores every `*.jsonl` journal in the data directory by replay.
    pub fn load(opts: PlannerOptions, data_dir: &Path) -> anyhow::Result<AppState> {
        fs::create_dir_all(data_dir).with_context(|| format!("creating {}", data_dir.display()))?;
        let state = AppState::new(opts, Some(data_dir.to_path_buf()));
        let mut entries: Vec<PathBuf> = fs::read_dir(data_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let text = fs::read_to_string(&path)?;
            let s = Session::replay(id.clone(), &text, opts).with_context(|| format!("replaying {}", path.display()))?;
            if let Some(n) = id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                let mut next = state.inner.next_id.lock().unwrap();
                *next = (*next).max(n + 1);
            }
            state.inner.persisted.lock().unwrap().insert(id.clone(), s.journal.len());
            state.inner.sessions.write().unwrap().insert(id, Arc::new(RwLock::new(s)));
        }
        Ok(state)
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.read().unwrap().len()
    }

    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session `{id}`")))
    }

    /// Appends journal records not yet written. Called with the session lock
    /// held, so a session's records land in order.
    fn persist(&self, s: &Session) -> Result<(), ApiError> {
        let Some(dir) = &self.inner.data_dir else { return Ok(()) };
        let mut persisted = self.inner.persisted.lock().unwrap();
        let done = persisted.get(&s.id).copied().unwrap_or(0);
        if done == s.journal.len() {
            return Ok(());
        }
        let path = dir.join(format!("{}.jsonl", s.id));
        let write = || -> std::io::Result<()> {
            let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
            for r in &s.journal[done..] {
                writeln!(f, "{}", r.to_line())?;
            }
            f.sync_data()
        };
        write().map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("writing journal: {e}")))?;
        persisted.insert(s.id.clone(), s.journal.len());
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::Problem(_) | SessionError::Malformed(_) | SessionError::Journal(_) => StatusCode::BAD_REQUEST,
            SessionError::BadIndex { .. } | SessionError::InitViolates(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Plan(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct CreateParams {
    max_horizon: Option<usize>,
}

async fn create(
    State(state): State<AppState>,
    Query(params): Query<CreateParams>,
    body: String,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let problem = parse_problem(&body).map_err(SessionError::from)?;
    let mut opts = state.inner.opts;
    if let Some(h) = params.max_horizon {
        opts.max_horizon = h;
    }
    let id = {
        let mut next = state.inner.next_id.lock().unwrap();
        let id = format!("s{next}");
        *next += 1;
        id
    };
    let st = state.clone();
    blocking(move || {
        let s = Session::create(id.clone(), problem, opts)?;
        st.persist(&s)?;
        let body = json!({
            "id": s.id,
            "round": s.round,
            "digest": s.digest(),
            "relaxation": s.engine.analysis.gate.status,
        });
        st.inner.sessions.write().unwrap().insert(id, Arc::new(RwLock::new(s)));
        Ok((StatusCode::CREATED, Json(body)))
    })
    .await
}

async fn get_state(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let shared = state.get(&id)?;
    blocking(move || Ok(Json(shared.read().unwrap().state_json()))).await
}

async fn update(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: String,
) -> Result<Json<Value>, ApiError> {
    let shared = state.get(&id)?;
    let v: Value = serde_json::from_str(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed update: {e}")))?;
    blocking(move || {
        let mut s = shared.write().unwrap();
        let u = parse_update(s.problem(), &v)?;
        let status = s.apply_update(&u)?;
        state.persist(&s)?;
        Ok(Json(json!({ "round": s.round, "relaxation": status, "digest": s.digest() })))
    })
    .await
}

async fn solve(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let shared = state.get(&id)?;
    blocking(move || {
        let mut s = shared.write().unwrap();
        let report = s.solve_round()?;
        state.persist(&s)?;
        Ok(Json(json!({
            "round": s.round,
            "outcome": outcome_json(s.problem(), &report.outcome),
            "lowerBound": report.lower_bound,
            "horizon": report.horizon,
            "stats": report.stats,
            "timings": report.timings,
        })))
    })
    .await
}

async fn journal(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let shared = state.get(&id)?;
    let lines = blocking(move || Ok(shared.read().unwrap().journal_lines())).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], lines).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/:id", get(get_state))
        .route("/sessions/:id/updates", post(update))
        .route("/sessions/:id/solve", post(solve))
        .route("/sessions/:id/journal", get(journal))
        .with_state(state)
}

pub async fn serve(state: AppState, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
        .await
        .with_context(|| format!("binding port {port}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
