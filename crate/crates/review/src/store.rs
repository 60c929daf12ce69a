//! Append-only ranking log with periodic snapshots.
//!
//! Every accepted event is one JSON line in `events.jsonl`. `snapshot.json`
//! holds the state after its first `events` lines, so opening replays only the
//! tail. Writers are serialized by a mutex; readers clone an `Arc` of the
//! current state and never wait on disk I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use polypaug_core::metrics::RankingRecord;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, ReviewError, Result};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewSession {
    pub session_id: String,
    pub rater_id: String,
    pub set_order: Vec<String>,
    #[serde(default)]
    pub completed: BTreeSet<String>,
}

impl ReviewSession {
    /// First set in this session's order that has not been ranked.
    pub fn next_set(&self) -> Option<&str> {
        self.set_order
            .iter()
            .find(|s| !self.completed.contains(*s))
            .map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionOpened(ReviewSession),
    Ranked(RankingRecord),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    pub sessions: BTreeMap<String, ReviewSession>,
    pub records: Vec<RankingRecord>,
}

impl StoreState {
    pub fn session_for_rater(&self, rater_id: &str) -> Option<&ReviewSession> {
        self.sessions.values().find(|s| s.rater_id == rater_id)
    }

    /// Checks that `event` may follow the current state.
    pub fn check(&self, event: &Event) -> Result<()> {
        match event {
            Event::SessionOpened(s) => {
                if self.sessions.contains_key(&s.session_id) {
                    return Err(ReviewError::InvalidConfig(format!("session {} exists", s.session_id)));
                }
            }
            Event::Ranked(r) => {
                let session = self
                    .sessions
                    .get(&r.session_id)
                    .ok_or_else(|| ReviewError::UnknownSession(r.session_id.clone()))?;
                if !session.set_order.contains(&r.set_id) {
                    return Err(ReviewError::UnknownSet(r.set_id.clone()));
                }
                if session.completed.contains(&r.set_id) {
                    return Err(ReviewError::DuplicateSubmission {
                        session: r.session_id.clone(),
                        set: r.set_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::SessionOpened(s) => {
                self.sessions.insert(s.session_id.clone(), s);
            }
            Event::Ranked(r) => {
                if let Some(s) = self.sessions.get_mut(&r.session_id) {
                    s.completed.insert(r.set_id.clone());
                }
                self.records.push(r);
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    events: usize,
    state: StoreState,
}

struct Writer {
    log: Option<File>,
    events: usize,
    since_snapshot: usize,
}

pub struct RankingStore {
    dir: Option<PathBuf>,
    snapshot_every: usize,
    state: RwLock<Arc<StoreState>>,
    writer: Mutex<Writer>,
}

impl RankingStore {
    /// A store that keeps nothing on disk.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            snapshot_every: 0,
            state: RwLock::new(Arc::new(StoreState::default())),
            writer: Mutex::new(Writer {
                log: None,
                events: 0,
                since_snapshot: 0,
            }),
        }
    }

    /// Opens or creates a store in `dir`, replaying the log past the last snapshot.
    ///
    /// A final line without a newline is a torn write and is truncated away.
    pub fn open(dir: &Path, snapshot_every: usize) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let (mut state, skip) = match std::fs::read(&snap_path) {
            Ok(bytes) => {
                let s: Snapshot = serde_json::from_slice(&bytes).map_err(|e| ReviewError::CorruptStore {
                    path: snap_path.clone(),
                    detail: e.to_string(),
                })?;
                (s.state, s.events)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (StoreState::default(), 0),
            Err(e) => return Err(io_err(&snap_path)(e)),
        };
        let log_path = dir.join(EVENTS_FILE);
        let mut events = 0;
        let mut valid_len = 0u64;
        if log_path.exists() {
            let mut reader = BufReader::new(File::open(&log_path).map_err(io_err(&log_path))?);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(io_err(&log_path))?;
                if n == 0 || !line.ends_with('\n') {
                    if n > 0 {
                        tracing::warn!(path = %log_path.display(), "dropping torn final event");
                    }
                    break;
                }
                if events >= skip {
                    let event: Event = serde_json::from_str(&line).map_err(|e| ReviewError::CorruptStore {
                        path: log_path.clone(),
                        detail: format!("line {}: {e}", events + 1),
                    })?;
                    state.apply(event);
                }
                events += 1;
                valid_len += n as u64;
            }
        }
        if events < skip {
            return Err(ReviewError::CorruptStore {
                path: log_path,
                detail: format!("snapshot covers {skip} events but the log has {events}"),
            });
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        log.set_len(valid_len).map_err(io_err(&log_path))?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            snapshot_every,
            state: RwLock::new(Arc::new(state)),
            writer: Mutex::new(Writer {
                log: Some(log),
                events,
                since_snapshot: events - skip,
            }),
        })
    }

    pub fn state(&self) -> Arc<StoreState> {
        self.state.read().expect("store lock poisoned").clone()
    }

    /// Validates and durably appends `event`, returning the state that includes it.
    pub fn append(&self, event: Event) -> Result<Arc<StoreState>> {
        let mut writer = self.writer.lock().expect("store lock poisoned");
        let current = self.state();
        current.check(&event)?;
        if let (Some(log), Some(dir)) = (writer.log.as_mut(), &self.dir) {
            let mut line = serde_json::to_vec(&event)?;
            line.push(b'\n');
            let path = dir.join(EVENTS_FILE);
            log.write_all(&line).map_err(io_err(&path))?;
            log.sync_data().map_err(io_err(&path))?;
        }
        let mut next = (*current).clone();
        next.apply(event);
        let next = Arc::new(next);
        *self.state.write().expect("store lock poisoned") = next.clone();
        writer.events += 1;
        writer.since_snapshot += 1;
        if self.snapshot_every > 0 && writer.since_snapshot >= self.snapshot_every {
            self.write_snapshot(&next, writer.events)?;
            writer.since_snapshot = 0;
        }
        Ok(next)
    }

    /// Writes a snapshot of everything appended so far.
    pub fn snapshot(&self) -> Result<()> {
        let mut writer = self.writer.lock().expect("store lock poisoned");
        let state = self.state();
        self.write_snapshot(&state, writer.events)?;
        writer.since_snapshot = 0;
        Ok(())
    }

    fn write_snapshot(&self, state: &StoreState, events: usize) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let bytes = serde_json::to_vec(&Snapshot {
            events,
            state: state.clone(),
        })?;
        polypaug_core::dataset::write_atomic(&dir.join(SNAPSHOT_FILE), &bytes)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(id: &str, sets: &[&str]) -> Event {
        Event::SessionOpened(ReviewSession {
            session_id: id.into(),
            rater_id: format!("rater-{id}"),
            set_order: sets.iter().map(|s| s.to_string()).collect(),
            completed: BTreeSet::new(),
        })
    }

    fn ranked(session: &str, set: &str) -> Event {
        Event::Ranked(RankingRecord {
            session_id: session.into(),
            set_id: set.into(),
            method_ranks_naturalness: [("a".to_string(), 1), ("b".to_string(), 2)].into(),
            method_ranks_similarity: BTreeMap::new(),
            timestamp: 7,
        })
    }

    #[test]
    fn duplicate_and_unknown_rejected() {
        let store = RankingStore::in_memory();
        store.append(session("s", &["x", "y"])).unwrap();
        store.append(ranked("s", "x")).unwrap();
        assert!(matches!(store.append(ranked("s", "x")), Err(ReviewError::DuplicateSubmission { .. })));
        assert!(matches!(store.append(ranked("s", "z")), Err(ReviewError::UnknownSet(_))));
        assert!(matches!(store.append(ranked("t", "x")), Err(ReviewError::UnknownSession(_))));
        let state = store.state();
        assert_eq!(state.records.len(), 1);
        assert_eq!(state.sessions["s"].next_set(), Some("y"));
    }

    #[test]
    fn reopen_replays_log_and_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = RankingStore::open(dir.path(), 2).unwrap();
            store.append(session("s", &["x", "y", "z"])).unwrap();
            store.append(ranked("s", "x")).unwrap();
            store.append(ranked("s", "y")).unwrap();
        }
        let snap: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(SNAPSHOT_FILE)).unwrap()).unwrap();
        assert_eq!(snap["events"], 2);
        let store = RankingStore::open(dir.path(), 2).unwrap();
        let state = store.state();
        assert_eq!(state.records.len(), 2);
        assert_eq!(state.sessions["s"].next_set(), Some("z"));
        store.append(ranked("s", "z")).unwrap();
        assert_eq!(RankingStore::open(dir.path(), 0).unwrap().state().records.len(), 3);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = RankingStore::open(dir.path(), 0).unwrap();
            store.append(session("s", &["x", "y"])).unwrap();
            store.append(ranked("s", "x")).unwrap();
        }
        let log = dir.path().join(EVENTS_FILE);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"event\":\"ranked\",\"sess").unwrap();
        drop(f);
        let store = RankingStore::open(dir.path(), 0).unwrap();
        assert_eq!(store.state().records.len(), 1);
        store.append(ranked("s", "y")).unwrap();
        let text = std::fs::read_to_string(&log).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().all(|l| serde_json::from_str::<Event>(l).is_ok()));
    }
}
