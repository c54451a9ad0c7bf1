//! Session registry and on-disk persistence.
//!
//! Each session lives in its own directory:
//!
//! ```text
//! <root>/<id>/meta.json      id, kind, dataset names, creation time
//! <root>/<id>/source.input   uploaded source table, verbatim
//! <root>/<id>/target.input   uploaded target schema or table, verbatim
//! <root>/<id>/import.json    JSON export the session was imported from
//! <root>/<id>/config.json    effective session config
//! <root>/<id>/events.jsonl   every successful action with its timestamp
//! <root>/<id>/memory.jsonl   agent memory log
//! ```
//!
//! Loading rebuilds the session from its inputs and replays `events.jsonl`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::http::StatusCode;
use colmatch_core::agent::{Agent, AgentMemory, MemoryRecord};
use colmatch_core::clock::{Clock, SystemClock};
use colmatch_core::session::{CandidateDetail, MutationOutcome, SessionSummary};
use colmatch_core::{load_target, ingest_source, Action, CurationSession, Execution, SessionConfig, SessionContext};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 50 * 1024 * 1024;
pub const DEFAULT_MAX_ATTRIBUTES: usize = 10_000;

pub type AgentFactory = Arc<dyn Fn() -> Agent + Send + Sync>;

#[derive(Clone)]
pub struct StoreConfig {
    /// Where sessions are persisted; `None` keeps them in memory only.
    pub session_dir: Option<PathBuf>,
    pub max_upload_bytes: usize,
    pub max_attributes: usize,
    pub exec: Execution,
    pub clock: Arc<dyn Clock>,
    /// Builds the agent for a new session. Each session owns its memory.
    pub agent_factory: AgentFactory,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            session_dir: None,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            max_attributes: DEFAULT_MAX_ATTRIBUTES,
            exec: Execution::default(),
            clock: Arc::new(SystemClock),
            agent_factory: Arc::new(Agent::from_env),
        }
    }
}

impl std::fmt::Debug for StoreConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoreConfig")
            .field("session_dir", &self.session_dir)
            .field("max_upload_bytes", &self.max_upload_bytes)
            .field("max_attributes", &self.max_attributes)
            .field("exec", &self.exec)
            .finish_non_exhaustive()
    }
}

/// An uploaded file.
#[derive(Debug, Clone)]
pub struct Upload {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Upload {
    /// Dataset name from an uploaded file name: final path component
    /// without extension.
    pub fn new(file_name: Option<&str>, fallback: &str, bytes: Vec<u8>) -> Self {
        Self {
            name: dataset_name(file_name, fallback),
            bytes,
        }
    }
}

pub fn dataset_name(file_name: Option<&str>, fallback: &str) -> String {
    file_name
        .and_then(|f| Path::new(f).file_stem())
        .and_then(|s| s.to_str())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .unwrap_or(fallback)
        .to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SessionKind {
    Inputs,
    Import,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    id: String,
    kind: SessionKind,
    source_name: String,
    target_name: String,
    created_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OpRecord {
    timestamp_ms: u64,
    op: Action,
}

pub struct SessionHandle {
    pub id: String,
    session: RwLock<CurationSession>,
    ops: Mutex<Option<File>>,
}

impl SessionHandle {
    pub fn read<R>(&self, f: impl FnOnce(&CurationSession) -> R) -> R {
        f(&self.session.read())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Created {
    pub id: String,
    pub summary: SessionSummary,
}

pub struct SessionStore {
    config: StoreConfig,
    sessions: RwLock<BTreeMap<String, Arc<SessionHandle>>>,
}

fn io_error(context: &str, e: impl std::fmt::Display) -> ApiError {
    ApiError::internal(format!("{context}: {e}"))
}

impl SessionStore {
    pub fn new(config: StoreConfig) -> Self {
        Self {
            config,
            sessions: RwLock::new(BTreeMap::new()),
        }
    }

    /// Opens the store and reloads every persisted session. Sessions that
    /// fail to load are skipped and reported.
    pub fn open(config: StoreConfig) -> Result<(Self, Vec<(String, ApiError)>), ApiError> {
        let store = Self::new(config);
        let mut failures = Vec::new();
        if let Some(root) = store.config.session_dir.clone() {
            fs::create_dir_all(&root).map_err(|e| io_error("creating session directory", e))?;
            let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
                .map_err(|e| io_error("reading session directory", e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_dir())
                .filter(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
                .collect();
            dirs.sort();
            for dir in dirs {
                let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                match store.load(&dir) {
                    Ok(handle) => {
                        store.sessions.write().insert(handle.id.clone(), Arc::new(handle));
                    }
                    Err(e) => failures.push((name, e)),
                }
            }
        }
        Ok((store, failures))
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.read().is_empty()
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    fn context(&self) -> SessionContext {
        SessionContext {
            agent: Arc::new((self.config.agent_factory)()),
            clock: self.config.clock.clone(),
            exec: self.config.exec,
        }
    }

    fn check_size(&self, what: &str, bytes: &[u8]) -> Result<(), ApiError> {
        if bytes.len() > self.config.max_upload_bytes {
            return Err(ApiError::too_large(
                "PayloadTooLarge",
                format!("{what} is {} bytes; the limit is {}", bytes.len(), self.config.max_upload_bytes),
            )
            .with_detail(serde_json::json!({ "field": what, "limit": self.config.max_upload_bytes })));
        }
        Ok(())
    }

    fn check_attributes(&self, session: &CurationSession) -> Result<(), ApiError> {
        self.check_counts("source", session.source().attributes.len())?;
        self.check_counts("target", session.target().attributes.len())
    }

    fn check_counts(&self, side: &str, n: usize) -> Result<(), ApiError> {
        if n > self.config.max_attributes {
            return Err(ApiError::too_large(
                "TooManyAttributes",
                format!("{side} has {n} attributes; the limit is {}", self.config.max_attributes),
            )
            .with_detail(serde_json::json!({ "side": side, "count": n, "limit": self.config.max_attributes })));
        }
        Ok(())
    }

    /// Parses the uploads, builds a session and persists it.
    pub fn create(&self, source: Upload, target: Upload, overrides: Option<&serde_json::Value>) -> Result<Created, ApiError> {
        self.check_size("source", &source.bytes)?;
        self.check_size("target", &target.bytes)?;
        let config = match overrides {
            Some(v) => SessionConfig::default()
                .merged(v)
                .map_err(|reason| ApiError::bad_request("InvalidConfig", reason.clone()).with_detail(serde_json::json!({ "reason": reason })))?,
            None => SessionConfig::default(),
        };
        let src = ingest_source(&source.bytes, &source.name).map_err(colmatch_core::SessionError::from)?;
        self.check_counts("source", src.attributes.len())?;
        let tgt = load_target(&target.bytes, &target.name).map_err(colmatch_core::SessionError::from)?;
        self.check_counts("target", tgt.attributes.len())?;
        let ctx = self.context();
        let agent = ctx.agent.clone();
        let session = CurationSession::create(src, tgt, config, colmatch_core::matchers::MatcherRegistry::builtin(), ctx)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let meta = Meta {
            id: id.clone(),
            kind: SessionKind::Inputs,
            source_name: source.name.clone(),
            target_name: target.name.clone(),
            created_ms: self.config.clock.now_ms(),
        };
        let ops = self.persist_new(&meta, session.config(), &[("source.input", &source.bytes), ("target.input", &target.bytes)], &[], &agent)?;
        self.insert(id, session, ops)
    }

    /// Builds a session from a JSON export.
    pub fn import(&self, bytes: &[u8]) -> Result<Created, ApiError> {
        self.check_size("import", bytes)?;
        let ctx = self.context();
        let agent = ctx.agent.clone();
        let session = CurationSession::import_json(bytes, ctx)?;
        self.check_attributes(&session)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let meta = Meta {
            id: id.clone(),
            kind: SessionKind::Import,
            source_name: session.source().name.clone(),
            target_name: session.target().name.clone(),
            created_ms: self.config.clock.now_ms(),
        };
        let memory: Vec<MemoryRecord> = agent
            .memory_snapshot()
            .entries()
            .map(|e| MemoryRecord::Put { entry: e.clone() })
            .collect();
        let ops = self.persist_new(&meta, session.config(), &[("import.json", bytes)], &memory, &agent)?;
        self.insert(id, session, ops)
    }

    fn insert(&self, id: String, session: CurationSession, ops: Option<File>) -> Result<Created, ApiError> {
        let summary = session.summary();
        let handle = SessionHandle {
            id: id.clone(),
            session: RwLock::new(session),
            ops: Mutex::new(ops),
        };
        self.sessions.write().insert(id.clone(), Arc::new(handle));
        Ok(Created { id, summary })
    }

    /// Writes a new session directory under a temporary name, then renames
    /// it into place so a crash never leaves a half-written session.
    fn persist_new(
        &self,
        meta: &Meta,
        config: &SessionConfig,
        files: &[(&str, &[u8])],
        memory: &[MemoryRecord],
        agent: &Agent,
    ) -> Result<Option<File>, ApiError> {
        let Some(root) = &self.config.session_dir else {
            return Ok(None);
        };
        fs::create_dir_all(root).map_err(|e| io_error("creating session directory", e))?;
        let staging = root.join(format!(".tmp-{}", meta.id));
        let dir = root.join(&meta.id);
        let write = || -> std::io::Result<()> {
            fs::create_dir_all(&staging)?;
            fs::write(staging.join("meta.json"), serde_json::to_vec_pretty(meta)?)?;
            fs::write(staging.join("config.json"), serde_json::to_vec_pretty(config)?)?;
            for (name, bytes) in files {
                fs::write(staging.join(name), bytes)?;
            }
            let mut log = String::new();
            for record in memory {
                log.push_str(&serde_json::to_string(record)?);
                log.push('\n');
            }
            fs::write(staging.join("memory.jsonl"), log)?;
            File::create(staging.join("events.jsonl"))?;
            fs::rename(&staging, &dir)
        };
        write().map_err(|e| {
            let _ = fs::remove_dir_all(&staging);
            io_error("persisting session", e)
        })?;
        agent
            .attach_log(&dir.join("memory.jsonl"))
            .map_err(|e| io_error("opening memory log", e))?;
        open_append(&dir.join("events.jsonl")).map(Some)
    }

    fn load(&self, dir: &Path) -> Result<SessionHandle, ApiError> {
        let read = |name: &str| fs::read(dir.join(name)).map_err(|e| io_error(&format!("reading {name}"), e));
        let meta: Meta = serde_json::from_slice(&read("meta.json")?).map_err(|e| io_error("parsing meta.json", e))?;
        let ctx = self.context();
        let agent = ctx.agent.clone();
        let mut session = match meta.kind {
            SessionKind::Inputs => {
                let config: SessionConfig =
                    serde_json::from_slice(&read("config.json")?).map_err(|e| io_error("parsing config.json", e))?;
                let src = ingest_source(&read("source.input")?, &meta.source_name).map_err(colmatch_core::SessionError::from)?;
                let tgt = load_target(&read("target.input")?, &meta.target_name).map_err(colmatch_core::SessionError::from)?;
                CurationSession::create(src, tgt, config, colmatch_core::matchers::MatcherRegistry::builtin(), ctx)?
            }
            SessionKind::Import => CurationSession::import_json(&read("import.json")?, ctx)?,
        };

        // Memory: every verdict ever stored, with feedback cleared; the
        // action replay re-applies feedback in order.
        let imported_feedback = agent.memory_snapshot().feedback_map();
        let memory_path = dir.join("memory.jsonl");
        let mut memory = AgentMemory::read(&memory_path).map_err(|e| io_error("reading memory log", e))?;
        memory.reset_feedback();
        agent.set_memory(memory);
        for (key, feedback) in imported_feedback {
            agent
                .record_feedback(&key, Some(feedback))
                .map_err(|e| io_error("restoring imported feedback", e))?;
        }

        let events_path = dir.join("events.jsonl");
        let (ops, torn) = read_ops(&events_path)?;
        if torn {
            let mut text = String::new();
            for op in &ops {
                text.push_str(&serde_json::to_string(op).map_err(|e| io_error("encoding event", e))?);
                text.push('\n');
            }
            fs::write(&events_path, text).map_err(|e| io_error("repairing event log", e))?;
        }
        for (line_no, op) in ops.into_iter().enumerate() {
            session.apply_at(op.op, op.timestamp_ms).map_err(|e| {
                io_error(&format!("replaying events.jsonl line {}", line_no + 1), e)
            })?;
        }
        agent.attach_log(&memory_path).map_err(|e| io_error("opening memory log", e))?;
        let ops = open_append(&events_path)?;
        Ok(SessionHandle {
            id: meta.id,
            session: RwLock::new(session),
            ops: Mutex::new(Some(ops)),
        })
    }

    /// Applies an action under the session's write lock and appends it to the
    /// event log.
    pub fn apply(&self, id: &str, action: Action) -> Result<MutationOutcome, ApiError> {
        let handle = self.get(id)?;
        let mut session = handle.session.write();
        let ts = self.config.clock.now_ms();
        let outcome = session.apply_at(action.clone(), ts)?;
        if let Some(file) = handle.ops.lock().as_mut() {
            let mut line = serde_json::to_string(&OpRecord { timestamp_ms: ts, op: action })
                .map_err(|e| io_error("encoding event", e))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|e| io_error("appending event", e))?;
        }
        Ok(outcome)
    }

    /// Candidate detail. The agent runs after the session lock is released.
    pub fn detail(&self, id: &str, source: &str, target: &str) -> Result<CandidateDetail, ApiError> {
        let handle = self.get(id)?;
        let (base, context, agent) = {
            let session = handle.session.read();
            let (base, context) = session.detail_base(source, target)?;
            (base, context, session.agent().clone())
        };
        Ok(CurationSession::complete_detail(&agent, base, &context))
    }

    pub fn read<R>(&self, id: &str, f: impl FnOnce(&CurationSession) -> R) -> Result<R, ApiError> {
        Ok(self.get(id)?.read(f))
    }
}

fn open_append(path: &Path) -> Result<File, ApiError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_error("opening event log", e))
}

/// Reads the event log. A torn final line (crash mid-append) is dropped and
/// reported so the caller can rewrite the log.
fn read_ops(path: &Path) -> Result<(Vec<OpRecord>, bool), ApiError> {
    if !path.exists() {
        return Ok((Vec::new(), false));
    }
    let file = File::open(path).map_err(|e| io_error("opening event log", e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| io_error("reading event log", e))?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut ops = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(op) => ops.push(op),
            Err(_) if Some(i) == last => return Ok((ops, true)),
            Err(e) => {
                return Err(ApiError::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "CorruptEventLog",
                    format!("events.jsonl line {}: {e}", i + 1),
                ))
            }
        }
    }
    Ok((ops, false))
}
