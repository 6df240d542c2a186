//! HTTP session API over the dialogue engine, with vote capture for NSV.
//!
//! Routes:
//! - `POST /api/session` → `{session_id}`
//! - `POST /api/session/{id}/message` `{text}` → `{reply, message_id, user_message_id, meta}`
//! - `POST /api/session/{id}/feedback` `{message_id, vote}` → ack
//! - `GET /api/metrics/nsv` → `{nsv, upvotes, downvotes, no_votes}`
//! - `GET /api/session/{id}/transcript` → ordered entries with meta and votes

mod ledger;

use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex as StdMutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

pub use ledger::{FeedbackLedger, FeedbackRecord};

use crate::dialogue::{DialogueEngine, DialogueState, ReplyMeta};
use crate::error::{Error, Result};
use crate::evalkit::Vote;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub idle_timeout: Duration,
    pub ledger_path: Option<PathBuf>,
    /// Directory for session snapshots; sessions survive restarts when set.
    pub sessions_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { idle_timeout: DEFAULT_IDLE_TIMEOUT, ledger_path: None, sessions_dir: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    User,
    Bot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub message_id: u64,
    pub author: Author,
    pub text: String,
    pub meta: Option<ReplyMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub state: DialogueState,
    pub created_at: u64,
    pub messages: Vec<Message>,
}

impl Session {
    fn next_id(&self) -> u64 {
        self.messages.last().map_or(1, |m| m.message_id + 1)
    }
}

struct Slot {
    session: Mutex<Session>,
    last_active: AtomicU64,
}

pub struct ServiceState {
    engine: Option<DialogueEngine>,
    config: ServiceConfig,
    sessions: StdMutex<HashMap<String, Arc<Slot>>>,
    ledger: StdMutex<FeedbackLedger>,
    started: Instant,
    counter: AtomicU64,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl ServiceState {
    /// Open the ledger and any persisted sessions. `engine = None` runs the
    /// service without models: session creation then answers 503.
    pub fn new(engine: Option<DialogueEngine>, config: ServiceConfig) -> Result<Arc<Self>> {
        let ledger = match &config.ledger_path {
            Some(p) => FeedbackLedger::open(p)?,
            None => FeedbackLedger::in_memory(),
        };
        let state = Self {
            engine,
            sessions: StdMutex::new(HashMap::new()),
            ledger: StdMutex::new(ledger),
            started: Instant::now(),
            counter: AtomicU64::new(0),
            config,
        };
        if let Some(dir) = &state.config.sessions_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let mut loaded = 0;
            for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
                let path = entry.map_err(|e| Error::io(dir, e))?.path();
                if path.extension().is_some_and(|x| x == "json") {
                    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    let s: Session = serde_json::from_str(&text)
                        .map_err(|e| Error::Parse { line: 1, message: format!("{}: {e}", path.display()) })?;
                    state.insert(s);
                    loaded += 1;
                }
            }
            log::info!("restored {loaded} sessions from {}", dir.display());
        }
        Ok(Arc::new(state))
    }

    fn tick(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn insert(&self, s: Session) {
        let slot = Arc::new(Slot { last_active: AtomicU64::new(self.tick()), session: Mutex::new(s.clone()) });
        self.sessions.lock().expect("session map").insert(s.id, slot);
    }

    fn snapshot_path(&self, id: &str) -> Option<PathBuf> {
        self.config.sessions_dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn persist(&self, s: &Session) -> Result<()> {
        let Some(path) = self.snapshot_path(&s.id) else { return Ok(()) };
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec(s).expect("session serializes");
        fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Drop sessions idle longer than the configured timeout.
    fn sweep(&self) {
        let now = self.tick();
        let limit = self.config.idle_timeout.as_millis() as u64;
        let mut map = self.sessions.lock().expect("session map");
        let expired: Vec<String> = map
            .iter()
            .filter(|(_, slot)| now.saturating_sub(slot.last_active.load(Ordering::Relaxed)) > limit)
            .map(|(id, _)| id.clone())
            .collect();
        for id in expired {
            map.remove(&id);
            if let Some(p) = self.snapshot_path(&id) {
                let _ = fs::remove_file(p);
            }
            log::info!("session {id} expired");
        }
    }

    fn slot(&self, id: &str) -> Option<Arc<Slot>> {
        self.sweep();
        let slot = self.sessions.lock().expect("session map").get(id).cloned()?;
        slot.last_active.store(self.tick(), Ordering::Relaxed);
        Some(slot)
    }

    pub fn create_session(&self) -> Result<String, ApiError> {
        if self.engine.is_none() {
            return Err(ApiError::unavailable("models not loaded"));
        }
        self.sweep();
        let id = uuid::Uuid::new_v4().simple().to_string();
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let session = Session {
            id: id.clone(),
            state: DialogueState::new(id.clone(), self.config.seed.wrapping_add(n)),
            created_at: now_ms(),
            messages: Vec::new(),
        };
        self.persist(&session)?;
        self.insert(session);
        Ok(id)
    }

    pub async fn post_message(&self, id: &str, text: &str) -> Result<MessageResponse, ApiError> {
        let engine = self.engine.clone().ok_or_else(|| ApiError::unavailable("models not loaded"))?;
        let slot = self.slot(id).ok_or_else(|| ApiError::not_found("unknown session"))?;
        if text.trim().is_empty() {
            return Err(ApiError::bad_request("empty text"));
        }
        let mut session = slot.session.lock().await;
        let mut state = session.state.clone();
        let text_owned = text.trim().to_string();
        let (reply, state) = tokio::task::spawn_blocking(move || {
            let r = engine.step(&mut state, &text_owned);
            r.map(|reply| (reply, state))
        })
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))??;
        let user_id = session.next_id();
        session.messages.push(Message { message_id: user_id, author: Author::User, text: text.trim().to_string(), meta: None });
        session.messages.push(Message {
            message_id: user_id + 1,
            author: Author::Bot,
            text: reply.text.clone(),
            meta: Some(reply.meta.clone()),
        });
        session.state = state;
        self.persist(&session)?;
        slot.last_active.store(self.tick(), Ordering::Relaxed);
        Ok(MessageResponse { reply: reply.text, message_id: user_id + 1, user_message_id: user_id, meta: reply.meta })
    }

    pub async fn post_feedback(&self, id: &str, message_id: u64, vote: Vote) -> Result<FeedbackAck, ApiError> {
        let slot = self.slot(id).ok_or_else(|| ApiError::not_found("unknown session"))?;
        let session = slot.session.lock().await;
        let msg = session
            .messages
            .iter()
            .find(|m| m.message_id == message_id)
            .ok_or_else(|| ApiError::not_found("unknown message"))?;
        if msg.author != Author::Bot {
            return Err(ApiError::bad_request("only bot replies can be voted on"));
        }
        let rec = FeedbackRecord { session_id: id.to_string(), message_id, vote, timestamp: now_ms() };
        let changed = self.ledger.lock().expect("ledger").record(rec)?;
        Ok(FeedbackAck { ok: true, message_id, vote, changed })
    }

    pub fn nsv(&self) -> NsvResponse {
        let view = self.ledger.lock().expect("ledger").view();
        NsvResponse { nsv: view.nsv().ok(), upvotes: view.upvotes, downvotes: view.downvotes, no_votes: view.total() == 0 }
    }

    pub async fn transcript(&self, id: &str) -> Result<Transcript, ApiError> {
        let slot = self.slot(id).ok_or_else(|| ApiError::not_found("unknown session"))?;
        let session = slot.session.lock().await;
        let ledger = self.ledger.lock().expect("ledger");
        let entries = session
            .messages
            .iter()
            .map(|m| TranscriptEntry {
                message_id: m.message_id,
                author: m.author,
                text: m.text.clone(),
                meta: m.meta.clone(),
                vote: ledger.vote_for(id, m.message_id),
            })
            .collect();
        Ok(Transcript {
            session_id: session.id.clone(),
            created_at: session.created_at,
            phase: session.state.phase,
            entries,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageResponse {
    pub reply: String,
    pub message_id: u64,
    pub user_message_id: u64,
    pub meta: ReplyMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub ok: bool,
    pub message_id: u64,
    pub vote: Vote,
    /// False when the vote repeated the standing one.
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsvResponse {
    /// Absent when there are no votes.
    pub nsv: Option<f64>,
    pub upvotes: u64,
    pub downvotes: u64,
    pub no_votes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub message_id: u64,
    pub author: Author,
    pub text: String,
    pub meta: Option<ReplyMeta>,
    pub vote: Option<Vote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub created_at: u64,
    pub phase: crate::dialogue::Phase,
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
    fn not_found(m: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, m)
    }
    fn bad_request(m: &str) -> Self {
        Self::new(StatusCode::BAD_REQUEST, m)
    }
    fn unavailable(m: &str) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, m)
    }
    fn internal(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, m)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::TooLong { .. } => Self::new(StatusCode::BAD_REQUEST, e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

#[derive(Deserialize)]
struct FeedbackBody {
    message_id: u64,
    vote: Vote,
}

type Shared = State<Arc<ServiceState>>;

async fn create(State(s): Shared) -> Result<impl IntoResponse, ApiError> {
    let id = s.create_session()?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

async fn message(State(s): Shared, UrlPath(id): UrlPath<String>, Json(b): Json<MessageBody>) -> Result<Json<MessageResponse>, ApiError> {
    Ok(Json(s.post_message(&id, &b.text).await?))
}

async fn feedback(State(s): Shared, UrlPath(id): UrlPath<String>, Json(b): Json<FeedbackBody>) -> Result<Json<FeedbackAck>, ApiError> {
    Ok(Json(s.post_feedback(&id, b.message_id, b.vote).await?))
}

async fn nsv(State(s): Shared) -> Json<NsvResponse> {
    Json(s.nsv())
}

async fn transcript(State(s): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<Transcript>, ApiError> {
    Ok(Json(s.transcript(&id).await?))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/api/session", post(create))
        .route("/api/session/{id}/message", post(message))
        .route("/api/session/{id}/feedback", post(feedback))
        .route("/api/session/{id}/transcript", get(transcript))
        .route("/api/metrics/nsv", get(nsv))
        .with_state(state)
}

pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(Path::new(&addr.to_string()), e))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io(Path::new(&addr.to_string()), e))
}
