//! Study sessions: condition, append-only event log, notepad, and the
//! metrics derived from the log.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use anyhow::Context;
use mudoc_core::agent::{AgentMode, AgentState, HistoryEntry, TurnTrace};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::config::{ActivityConfig, TimingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    MuDoC,
    TexDoC,
    DocSearch,
}

impl Condition {
    /// The agent mode of a chat condition; `None` for DocSearch.
    pub fn agent_mode(self) -> Option<AgentMode> {
        match self {
            Condition::MuDoC => Some(AgentMode::MuDoC),
            Condition::TexDoC => Some(AgentMode::TexDoC),
            Condition::DocSearch => None,
        }
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mudoc" => Ok(Condition::MuDoC),
            "texdoc" => Ok(Condition::TexDoC),
            "docsearch" => Ok(Condition::DocSearch),
            _ => Err(format!("unknown condition `{s}`; expected MuDoC, TexDoC or DocSearch")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tab {
    Objectives,
    Chat,
    Document,
}

/// One telemetry record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Created { condition: Condition },
    ChatQuery { turn: usize, message: String },
    ChatResponse { turn: usize, response: String, trace: TurnTrace },
    ChatFailed { turn: usize, error: String },
    Search { query: String, results: usize },
    NoteSaved { bytes: usize },
    Heartbeat,
    TabSwitch { tab: Tab },
    CitationClick { doc_id: String, block_ids: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub at_ms: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub time_minutes: f64,
    pub active_ms: u64,
    pub query_count: usize,
    pub note_edit_count: usize,
    pub citation_click_count: usize,
    pub textbook_tab_fraction: f64,
}

/// Active time: the gaps between consecutive activity marks (creation and
/// heartbeats) that do not exceed `max_gap`.
pub fn active_ms(log: &[LogRecord], activity: &ActivityConfig) -> u64 {
    let max_gap = activity.max_gap_secs * 1000;
    let mut last: Option<u64> = None;
    let mut total = 0u64;
    for r in log {
        if matches!(r.event, SessionEvent::Created { .. } | SessionEvent::Heartbeat) {
            if let Some(prev) = last {
                let gap = r.at_ms.saturating_sub(prev);
                if gap <= max_gap {
                    total += gap;
                }
            }
            last = Some(r.at_ms);
        }
    }
    total
}

/// Share of the logged session span spent on the document tab. The view
/// starts on the objectives tab; the span ends at the last record.
pub fn textbook_tab_fraction(log: &[LogRecord]) -> f64 {
    let (Some(first), Some(last)) = (log.first(), log.last()) else { return 0.0 };
    let span = last.at_ms.saturating_sub(first.at_ms);
    if span == 0 {
        return 0.0;
    }
    let mut tab = Tab::Objectives;
    let mut since = first.at_ms;
    let mut on_document = 0u64;
    for r in log {
        if let SessionEvent::TabSwitch { tab: next } = r.event {
            if tab == Tab::Document {
                on_document += r.at_ms.saturating_sub(since);
            }
            tab = next;
            since = r.at_ms;
        }
    }
    if tab == Tab::Document {
        on_document += last.at_ms.saturating_sub(since);
    }
    (on_document as f64 / span as f64).clamp(0.0, 1.0)
}

/// Pure fold over the event log.
pub fn metrics(log: &[LogRecord], activity: &ActivityConfig) -> SessionMetrics {
    let count = |f: fn(&SessionEvent) -> bool| log.iter().filter(|r| f(&r.event)).count();
    let active = active_ms(log, activity);
    SessionMetrics {
        time_minutes: active as f64 / 60_000.0,
        active_ms: active,
        query_count: count(|e| matches!(e, SessionEvent::ChatQuery { .. } | SessionEvent::Search { .. })),
        note_edit_count: count(|e| matches!(e, SessionEvent::NoteSaved { .. })),
        citation_click_count: count(|e| matches!(e, SessionEvent::CitationClick { .. })),
        textbook_tab_fraction: textbook_tab_fraction(log),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingState {
    pub can_advance: bool,
    pub must_advance: bool,
    pub active_ms: u64,
    pub min_ms: u64,
    pub max_ms: u64,
}

pub fn timing_state(active_ms: u64, cfg: &TimingConfig) -> TimingState {
    let min_ms = (cfg.min_minutes * 60_000.0).round() as u64;
    let max_ms = (cfg.max_minutes * 60_000.0).round() as u64;
    TimingState { can_advance: active_ms >= min_ms, must_advance: active_ms >= max_ms, active_ms, min_ms, max_ms }
}

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

struct LogState {
    records: Vec<LogRecord>,
    file: File,
}

pub struct Session {
    pub id: Uuid,
    pub condition: Condition,
    pub created_at_ms: u64,
    dir: PathBuf,
    log: std::sync::Mutex<LogState>,
    notes: std::sync::Mutex<String>,
    /// Held for the whole of a chat turn.
    pub agent: tokio::sync::Mutex<AgentState>,
    busy: AtomicBool,
}

/// Releases the session's in-flight flag when dropped.
pub struct TurnGuard(Arc<Session>);

impl Drop for TurnGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::SeqCst);
    }
}

impl Session {
    pub fn try_begin_turn(self: &Arc<Self>) -> Option<TurnGuard> {
        self.busy
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .ok()
            .map(|_| TurnGuard(self.clone()))
    }

    pub fn is_busy(&self) -> bool {
        self.busy.load(Ordering::SeqCst)
    }

    /// Appends to the in-memory log and the durable log file.
    pub fn append(&self, at_ms: u64, event: SessionEvent) -> anyhow::Result<LogRecord> {
        let mut log = self.log.lock().expect("log lock");
        let record = LogRecord { seq: log.records.len() as u64, at_ms, event };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        log.file.write_all(line.as_bytes())?;
        log.file.flush()?;
        log.records.push(record.clone());
        Ok(record)
    }

    pub fn log(&self) -> Vec<LogRecord> {
        self.log.lock().expect("log lock").records.clone()
    }

    pub fn notes(&self) -> String {
        self.notes.lock().expect("notes lock").clone()
    }

    /// Replaces the notepad and writes a snapshot.
    pub fn save_notes(&self, at_ms: u64, text: String) -> anyhow::Result<()> {
        let tmp = self.dir.join("notes.txt.tmp");
        std::fs::write(&tmp, &text)?;
        std::fs::rename(&tmp, self.dir.join("notes.txt"))?;
        let bytes = text.len();
        *self.notes.lock().expect("notes lock") = text;
        self.append(at_ms, SessionEvent::NoteSaved { bytes })?;
        Ok(())
    }

    pub fn trace(&self, turn: usize) -> Option<TurnTrace> {
        self.log().into_iter().find_map(|r| match r.event {
            SessionEvent::ChatResponse { turn: t, trace, .. } if t == turn => Some(trace),
            _ => None,
        })
    }

    /// Number of chat turns completed, which is also the next turn number.
    pub fn turns_completed(&self) -> usize {
        self.log().iter().filter(|r| matches!(r.event, SessionEvent::ChatResponse { .. })).count()
    }
}

/// All sessions, persisted under one directory as
/// `<dir>/<session_id>/events.jsonl` plus `notes.txt`.
pub struct SessionStore {
    dir: PathBuf,
    sessions: RwLock<HashMap<Uuid, Arc<Session>>>,
    max_iterations: usize,
    pub clock: Clock,
}

impl SessionStore {
    /// Opens the store and replays every persisted session.
    pub fn open(dir: &Path, max_iterations: usize, clock: Clock) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let store = Self { dir: dir.to_path_buf(), sessions: RwLock::new(HashMap::new()), max_iterations, clock };
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for path in entries {
            let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| Uuid::parse_str(n).ok()) else {
                continue;
            };
            let session = store.load_session(id, &path).with_context(|| format!("loading session {id}"))?;
            store.sessions.write().expect("store lock").insert(id, Arc::new(session));
        }
        Ok(store)
    }

    fn load_session(&self, id: Uuid, dir: &Path) -> anyhow::Result<Session> {
        let log_path = dir.join("events.jsonl");
        let mut records = Vec::new();
        for (n, line) in BufReader::new(File::open(&log_path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogRecord>(&line) {
                Ok(r) => records.push(r),
                // a torn final write is dropped; anything else is corruption
                Err(e) if n + 1 == count_lines(&log_path)? => tracing::warn!(%id, error = %e, "dropping torn last log line"),
                Err(e) => return Err(e).with_context(|| format!("{}:{}", log_path.display(), n + 1)),
            }
        }
        let Some(LogRecord { at_ms: created_at_ms, event: SessionEvent::Created { condition }, .. }) = records.first().cloned() else {
            anyhow::bail!("log does not start with a creation record");
        };
        let notes = std::fs::read_to_string(dir.join("notes.txt")).unwrap_or_default();
        let mut agent = AgentState::new(condition.agent_mode().unwrap_or(AgentMode::TexDoC), self.max_iterations);
        let mut pending: HashMap<usize, String> = HashMap::new();
        for r in &records {
            match &r.event {
                SessionEvent::ChatQuery { turn, message } => {
                    pending.insert(*turn, message.clone());
                }
                SessionEvent::ChatResponse { turn, response, trace } => {
                    if let Some(q) = pending.remove(turn) {
                        agent.history.push(HistoryEntry::User { content: q });
                        agent.history.push(HistoryEntry::Assistant { content: response.clone() });
                        agent.traces.push(trace.clone());
                    }
                }
                _ => {}
            }
        }
        let file = OpenOptions::new().append(true).open(&log_path)?;
        Ok(Session {
            id,
            condition,
            created_at_ms,
            dir: dir.to_path_buf(),
            log: std::sync::Mutex::new(LogState { records, file }),
            notes: std::sync::Mutex::new(notes),
            agent: tokio::sync::Mutex::new(agent),
            busy: AtomicBool::new(false),
        })
    }

    pub fn create(&self, condition: Condition) -> anyhow::Result<Arc<Session>> {
        let id = Uuid::new_v4();
        let dir = self.dir.join(id.to_string());
        std::fs::create_dir_all(&dir)?;
        let file = OpenOptions::new().create(true).append(true).open(dir.join("events.jsonl"))?;
        let now = (self.clock)();
        let session = Arc::new(Session {
            id,
            condition,
            created_at_ms: now,
            dir,
            log: std::sync::Mutex::new(LogState { records: Vec::new(), file }),
            notes: std::sync::Mutex::new(String::new()),
            agent: tokio::sync::Mutex::new(AgentState::new(
                condition.agent_mode().unwrap_or(AgentMode::TexDoC),
                self.max_iterations,
            )),
            busy: AtomicBool::new(false),
        });
        session.append(now, SessionEvent::Created { condition })?;
        self.sessions.write().expect("store lock").insert(id, session.clone());
        Ok(session)
    }

    pub fn get(&self, id: &Uuid) -> Option<Arc<Session>> {
        self.sessions.read().expect("store lock").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn now(&self) -> u64 {
        (self.clock)()
    }
}

fn count_lines(path: &Path) -> anyhow::Result<usize> {
    Ok(BufReader::new(File::open(path)?).lines().count())
}
