//! HTTP routes and the shared registry of live sessions.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Result, SessionError};
use crate::model::{
    AppendResponse, Session, SessionConfig, SessionListing, SessionView, Submission, SCHEMA_VERSION,
};
use crate::store::{Event, EventStore};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

/// Registry of sessions plus their event log. Each session sits behind its
/// own lock so writes to one session are serialized while different
/// sessions proceed in parallel.
#[derive(Debug)]
pub struct SessionRegistry {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    store: EventStore,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl SessionRegistry {
    pub fn in_memory() -> Self {
        Self {
            sessions: RwLock::new(HashMap::new()),
            store: EventStore::in_memory(),
        }
    }

    /// Opens a persistent registry, replaying any existing log.
    pub fn open(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (store, events) = EventStore::open(path)?;
        let sessions = replay(&events)?;
        Ok(Self {
            sessions: RwLock::new(
                sessions
                    .into_iter()
                    .map(|(id, s)| (id, Arc::new(Mutex::new(s))))
                    .collect(),
            ),
            store,
        })
    }

    pub fn create(&self, config: SessionConfig) -> Result<SessionView> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let at_ms = now_ms();
        let session = Session::new(id.clone(), config.clone(), at_ms)?;
        self.store.append(&Event::Created {
            session: id.clone(),
            config,
            at_ms,
        })?;
        let view = session.view();
        self.sessions
            .write()
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    pub fn append(
        &self,
        id: &str,
        index: Option<u64>,
        scores: BTreeMap<String, f64>,
        idempotency_key: Option<String>,
    ) -> Result<AppendResponse> {
        let handle = self.get(id)?;
        let mut session = handle.lock();
        match session.prepare(index, scores, idempotency_key, now_ms())? {
            Submission::Replay(r) => Ok(r),
            Submission::New(prepared) => {
                self.store.append(&Event::Trial {
                    session: id.to_string(),
                    trial: prepared.record().clone(),
                })?;
                session.apply(prepared)
            }
        }
    }

    pub fn view(&self, id: &str) -> Result<SessionView> {
        Ok(self.get(id)?.lock().view())
    }

    pub fn list(&self) -> Vec<SessionListing> {
        let handles: Vec<_> = self.sessions.read().values().cloned().collect();
        let mut out: Vec<SessionListing> = handles.iter().map(|h| h.lock().listing()).collect();
        out.sort_by(|a, b| {
            a.created_at_ms
                .cmp(&b.created_at_ms)
                .then_with(|| a.id.cmp(&b.id))
        });
        out
    }
}

/// Rebuilds sessions from an event sequence.
pub fn replay(events: &[Event]) -> Result<HashMap<String, Session>> {
    let mut sessions = HashMap::new();
    for (i, event) in events.iter().enumerate() {
        match event {
            Event::Created {
                session,
                config,
                at_ms,
            } => {
                let s = Session::new(session.clone(), config.clone(), *at_ms)?;
                sessions.insert(session.clone(), s);
            }
            Event::Trial { session, trial } => {
                let s = sessions
                    .get_mut(session)
                    .ok_or_else(|| SessionError::Corrupt {
                        line: i + 1,
                        reason: format!("trial for unknown session `{session}`"),
                    })?;
                s.append(
                    Some(trial.index),
                    trial.scores.clone(),
                    trial.idempotency_key.clone(),
                    trial.at_ms,
                )?;
            }
        }
    }
    Ok(sessions)
}

#[derive(Debug, Deserialize)]
struct CreateRequest {
    #[serde(default)]
    v: Option<u32>,
    #[serde(flatten)]
    config: SessionConfig,
}

#[derive(Debug, Deserialize)]
struct TrialRequest {
    #[serde(default)]
    v: Option<u32>,
    /// Optional check that this is the next trial index.
    #[serde(default)]
    trial: Option<u64>,
    scores: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct ListResponse {
    v: u32,
    sessions: Vec<SessionListing>,
}

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            SessionError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            SessionError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            SessionError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            SessionError::Store(_) | SessionError::Corrupt { .. } => {
                tracing::error!(error = %self.0, "storage failure");
                (StatusCode::INTERNAL_SERVER_ERROR, "storage")
            }
        };
        let body = json!({
            "v": SCHEMA_VERSION,
            "error": { "code": code, "message": self.0.to_string() },
        });
        (status, Json(body)).into_response()
    }
}

fn check_version(v: Option<u32>) -> Result<()> {
    match v {
        None | Some(SCHEMA_VERSION) => Ok(()),
        Some(other) => Err(SessionError::Validation(format!(
            "unsupported schema version {other}, expected {SCHEMA_VERSION}"
        ))),
    }
}

fn body<T>(payload: std::result::Result<Json<T>, JsonRejection>) -> Result<T> {
    payload
        .map(|Json(t)| t)
        .map_err(|e| SessionError::Validation(e.body_text()))
}

async fn create_session(
    State(reg): State<Arc<SessionRegistry>>,
    payload: std::result::Result<Json<CreateRequest>, JsonRejection>,
) -> std::result::Result<(StatusCode, Json<SessionView>), ApiError> {
    let req = body(payload)?;
    check_version(req.v)?;
    let view = reg.create(req.config)?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn append_trial(
    State(reg): State<Arc<SessionRegistry>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    payload: std::result::Result<Json<TrialRequest>, JsonRejection>,
) -> std::result::Result<Json<AppendResponse>, ApiError> {
    let req = body(payload)?;
    check_version(req.v)?;
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| SessionError::Validation("idempotency key must be ASCII".into()))?
                .to_string(),
        ),
        None => None,
    };
    let reg = Arc::clone(&reg);
    // engine steps are CPU-bound; keep them off the async workers
    let response = tokio::task::spawn_blocking(move || reg.append(&id, req.trial, req.scores, key))
        .await
        .map_err(|e| SessionError::Store(std::io::Error::other(e)))??;
    Ok(Json(response))
}

async fn get_session(
    State(reg): State<Arc<SessionRegistry>>,
    Path(id): Path<String>,
) -> std::result::Result<Json<SessionView>, ApiError> {
    Ok(Json(reg.view(&id)?))
}

async fn list_sessions(State(reg): State<Arc<SessionRegistry>>) -> Json<ListResponse> {
    Json(ListResponse {
        v: SCHEMA_VERSION,
        sessions: reg.list(),
    })
}

pub fn router(registry: Arc<SessionRegistry>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/trials", post(append_trial))
        .with_state(registry)
}
