//! HTTP JSON service over a pipeline output directory.
//!
//! Reads are served from the artifacts on disk; the only mutable state is the
//! set of selection sessions. A committed selection is also written to
//! `selection.json` in the run directory for `evaluate` and `explain`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use fairsel_core::pipeline::{
    fingerprint, load_cloud, Artifact, RankedCloud, SelectionRecord, SelectionSource, SELECTION_FILE,
    TABULATION_FILE,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub cloud_fingerprint: String,
    pub selected_id: Option<usize>,
    pub committed: bool,
    pub justification: Option<String>,
    pub created_at: String,
    pub committed_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub candidate_id: usize,
    #[serde(default)]
    pub justification: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateDetail<'a> {
    pub id: usize,
    pub case: usize,
    pub case_label: String,
    pub removed: Vec<String>,
    pub columns: Vec<String>,
    pub coefficients: Vec<(String, f64)>,
    pub loss: f64,
    pub threshold: f64,
    pub fairness: &'a BTreeMap<String, f64>,
    pub fri: Option<f64>,
    pub rank: Option<usize>,
    pub optimum: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<&'a str>,
}

pub type Clock = Arc<dyn Fn() -> String + Send + Sync>;

pub struct AppState {
    dir: PathBuf,
    config_hash: String,
    fingerprint: String,
    cloud: RankedCloud,
    cloud_bytes: Bytes,
    tabulation_bytes: Bytes,
    sessions: Mutex<BTreeMap<String, Session>>,
    clock: Clock,
}

impl AppState {
    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        Self::load_with_clock(dir, Arc::new(|| chrono::Utc::now().to_rfc3339()))
    }

    pub fn load_with_clock(dir: &Path, clock: Clock) -> anyhow::Result<Self> {
        let (cloud, bytes, config_hash) =
            load_cloud(dir).with_context(|| format!("loading ranked cloud from {}", dir.display()))?;
        let tab_path = dir.join(TABULATION_FILE);
        let tabulation = std::fs::read(&tab_path).with_context(|| format!("reading {}", tab_path.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash,
            fingerprint: fingerprint(&bytes),
            cloud,
            cloud_bytes: Bytes::from(bytes),
            tabulation_bytes: Bytes::from(tabulation),
            sessions: Mutex::new(BTreeMap::new()),
            clock,
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/cloud", get(get_cloud))
        .route("/api/candidate/{id}", get(get_candidate))
        .route("/api/tabulation", get(get_tabulation))
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(get_session))
        .route("/api/session/{id}/select", post(select))
        .with_state(state)
}

fn raw_json(bytes: Bytes) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    let body = serde_json::json!({ "error": msg.into() });
    (status, axum::Json(body)).into_response()
}

fn envelope<T: Serialize>(state: &AppState, status: StatusCode, body: T) -> Response {
    (status, axum::Json(Artifact::new(&state.config_hash, body))).into_response()
}

async fn get_cloud(State(s): State<Arc<AppState>>) -> Response {
    raw_json(s.cloud_bytes.clone())
}

async fn get_tabulation(State(s): State<Arc<AppState>>) -> Response {
    raw_json(s.tabulation_bytes.clone())
}

async fn get_candidate(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let Ok(id) = id.parse::<usize>() else {
        return error(StatusCode::BAD_REQUEST, format!("candidate id `{id}` is not an integer"));
    };
    let cloud = &s.cloud.cloud;
    let Some(c) = cloud.candidate(id) else {
        return error(StatusCode::NOT_FOUND, format!("no candidate {id}"));
    };
    let case = cloud.case_of(c);
    let mut columns = vec![fairsel_core::glm::INTERCEPT.to_string()];
    columns.extend(case.columns().iter().cloned());
    let detail = CandidateDetail {
        id: c.id,
        case: c.case,
        case_label: case.label(),
        removed: case.removed.iter().cloned().collect(),
        coefficients: columns.iter().cloned().zip(c.beta.iter().copied()).collect(),
        columns,
        loss: c.loss,
        threshold: c.threshold,
        fairness: &c.fairness,
        fri: c.fri,
        rank: c.rank,
        optimum: c.optimum,
        flag: c.flag.as_deref(),
    };
    envelope(&s, StatusCode::OK, detail)
}

async fn create_session(State(s): State<Arc<AppState>>) -> Response {
    let session = Session {
        session_id: uuid::Uuid::new_v4().simple().to_string(),
        cloud_fingerprint: s.fingerprint.clone(),
        selected_id: None,
        committed: false,
        justification: None,
        created_at: (s.clock)(),
        committed_at: None,
    };
    s.sessions
        .lock()
        .expect("session lock")
        .insert(session.session_id.clone(), session.clone());
    envelope(&s, StatusCode::CREATED, session)
}

async fn get_session(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let sessions = s.sessions.lock().expect("session lock");
    match sessions.get(&id) {
        Some(sess) => envelope(&s, StatusCode::OK, sess),
        None => error(StatusCode::NOT_FOUND, format!("no session {id}")),
    }
}

async fn select(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    // One lock for the whole commit serializes writers; GET handlers only read.
    let mut sessions = s.sessions.lock().expect("session lock");
    let Some(sess) = sessions.get_mut(&id) else {
        return error(StatusCode::NOT_FOUND, format!("no session {id}"));
    };
    let req: SelectRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    let justification = req.justification.map(|j| j.trim().to_string()).filter(|j| !j.is_empty());

    if sess.committed {
        return if sess.selected_id == Some(req.candidate_id) && sess.justification == justification {
            envelope(&s, StatusCode::OK, &*sess)
        } else {
            error(
                StatusCode::CONFLICT,
                format!("session {id} already committed candidate {}", sess.selected_id.unwrap_or(0)),
            )
        };
    }
    let Some(cand) = s.cloud.cloud.candidate(req.candidate_id) else {
        return error(StatusCode::NOT_FOUND, format!("no candidate {}", req.candidate_id));
    };
    if cand.rank != Some(1) && justification.is_none() {
        return error(
            StatusCode::BAD_REQUEST,
            format!("candidate {} is not rank 1; a justification is required", cand.id),
        );
    }

    let now = (s.clock)();
    let record = SelectionRecord {
        source: SelectionSource::Committed,
        cloud_fingerprint: s.fingerprint.clone(),
        selected_id: cand.id,
        rank: cand.rank,
        case: s.cloud.cloud.case_of(cand).label(),
        justification: justification.clone(),
        session_id: Some(id.clone()),
        committed_at: Some(now.clone()),
    };
    let path = s.dir.join(SELECTION_FILE);
    let written = Artifact::new(&s.config_hash, &record)
        .to_bytes()
        .map_err(anyhow::Error::from)
        .and_then(|b| std::fs::write(&path, b).map_err(anyhow::Error::from));
    if let Err(e) = written {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("writing {}: {e}", path.display()));
    }
    tracing::info!(session = %id, candidate = cand.id, "selection committed");

    sess.selected_id = Some(cand.id);
    sess.committed = true;
    sess.justification = justification;
    sess.committed_at = Some(now);
    envelope(&s, StatusCode::OK, &*sess)
}

pub async fn serve(dir: &Path, bind: &str) -> anyhow::Result<()> {
    let state = Arc::new(AppState::load(dir)?);
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .with_context(|| format!("binding {bind}"))?;
    tracing::info!(addr = %listener.local_addr()?, dir = %dir.display(), "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
