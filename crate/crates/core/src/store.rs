//! Append-only event log of yawns and alarms.
//!
//! One event per line. Appends write a whole line and sync before returning,
//! so readers (possibly in another process) only ever consume lines that end
//! in a newline. A trailing fragment without a newline is a torn write: it is
//! skipped by readers and truncated away when the log is opened for writing.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Yawn,
    Alarm,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Yawn => "yawn",
            EventKind::Alarm => "alarm",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = StoreError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yawn" => Ok(EventKind::Yawn),
            "alarm" => Ok(EventKind::Alarm),
            other => Err(StoreError::InvalidEvent(format!("unknown kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub kind: EventKind,
    pub t_ms: u64,
    #[serde(rename = "session")]
    pub session_id: String,
    #[serde(rename = "wall")]
    pub wall_time: String,
}

impl Event {
    pub fn new(kind: EventKind, t_ms: u64, session_id: impl Into<String>, wall_time: impl Into<String>) -> Self {
        Self {
            kind,
            t_ms,
            session_id: session_id.into(),
            wall_time: wall_time.into(),
        }
    }

    pub fn to_line(&self) -> String {
        jsonl::to_line(self)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        DateTime::parse_from_rfc3339(&self.wall_time)
            .map_err(|e| StoreError::InvalidEvent(format!("wall time {:?}: {e}", self.wall_time)))?;
        Ok(())
    }
}

pub fn format_wall(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Clock-free wall time for replays: the Unix epoch plus the session offset.
pub fn replay_wall_time(t_ms: u64) -> String {
    let t = Utc
        .timestamp_millis_opt(t_ms.min(i64::MAX as u64) as i64)
        .single()
        .unwrap_or(DateTime::<Utc>::MAX_UTC);
    format_wall(t)
}

pub fn now_wall_time() -> String {
    format_wall(Utc::now())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub yawns: u64,
    pub alarms: u64,
}

impl Summary {
    pub fn count(&mut self, kind: EventKind) {
        match kind {
            EventKind::Yawn => self.yawns += 1,
            EventKind::Alarm => self.alarms += 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("event log {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("session {session:?}: t_ms {t_ms} precedes last appended {last}")]
    Order { session: String, last: u64, t_ms: u64 },
    #[error("event log is read-only")]
    ReadOnly,
    #[error("invalid event: {0}")]
    InvalidEvent(String),
}

#[derive(Debug, Default)]
struct Snapshot {
    offset: u64,
    events: Arc<Vec<Event>>,
    last_t: HashMap<String, u64>,
    skipped: usize,
}

/// Result of parsing a byte buffer of log lines.
struct Scan {
    events: Vec<Event>,
    /// Bytes up to and including the last newline.
    consumed: usize,
    skipped: usize,
}

fn scan(bytes: &[u8], first_line: usize) -> Scan {
    let consumed = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut events = Vec::new();
    let mut skipped = 0;
    for (i, raw) in bytes[..consumed].split(|&b| b == b'\n').enumerate() {
        if raw.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice::<Event>(raw) {
            Ok(ev) => events.push(ev),
            Err(e) => {
                skipped += 1;
                log::warn!("event log line {}: skipping unreadable record: {e}", first_line + i);
            }
        }
    }
    Scan {
        events,
        consumed,
        skipped,
    }
}

/// Reads every complete event line of `path`, skipping a torn tail.
pub fn read_events(path: &Path) -> Result<Vec<Event>, StoreError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(StoreError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let s = scan(&bytes, 1);
    if s.consumed < bytes.len() {
        log::warn!("event log {}: ignoring torn final line", path.display());
    }
    Ok(s.events)
}

/// File-backed event store: a single writer and any number of readers.
#[derive(Debug)]
pub struct EventStore {
    path: PathBuf,
    writer: Option<Mutex<File>>,
    snapshot: Mutex<Snapshot>,
}

impl EventStore {
    /// Opens (creating if needed) for appending. A torn final line is truncated.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err)?;
        let consumed = scan(&bytes, 1).consumed;
        if consumed < bytes.len() {
            log::warn!(
                "event log {}: truncating torn final line ({} bytes)",
                path.display(),
                bytes.len() - consumed
            );
            file.set_len(consumed as u64).map_err(io_err)?;
            file.sync_all().map_err(io_err)?;
        }
        let store = Self {
            path,
            writer: Some(Mutex::new(file)),
            snapshot: Mutex::new(Snapshot::default()),
        };
        store.refresh()?;
        Ok(store)
    }

    /// Opens an existing log, replacing its contents with nothing.
    pub fn create(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        File::create(&path).map_err(|source| StoreError::Io {
            path: path.clone(),
            source,
        })?;
        Self::open(path)
    }

    /// Opens for reading only. The file is never created or modified; a
    /// missing file reads as empty.
    pub fn open_read_only(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let store = Self {
            path: path.into(),
            writer: None,
            snapshot: Mutex::new(Snapshot::default()),
        };
        store.refresh()?;
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_read_only(&self) -> bool {
        self.writer.is_none()
    }

    fn lock_snapshot(&self) -> MutexGuard<'_, Snapshot> {
        self.snapshot.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Picks up lines appended since the last read (by any process).
    fn refresh_locked(&self, snap: &mut Snapshot) -> Result<(), StoreError> {
        let io_err = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        let mut file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                *snap = Snapshot::default();
                return Ok(());
            }
            Err(e) => return Err(io_err(e)),
        };
        let len = file.metadata().map_err(io_err)?.len();
        if len < snap.offset {
            log::warn!("event log {} shrank; rescanning", self.path.display());
            *snap = Snapshot::default();
        }
        if len == snap.offset {
            return Ok(());
        }
        file.seek(SeekFrom::Start(snap.offset)).map_err(io_err)?;
        let mut bytes = Vec::with_capacity((len - snap.offset) as usize);
        file.take(len - snap.offset).read_to_end(&mut bytes).map_err(io_err)?;
        let first_line = snap.events.len() + snap.skipped + 1;
        let s = scan(&bytes, first_line);
        if s.consumed == 0 {
            return Ok(());
        }
        let events = Arc::make_mut(&mut snap.events);
        for ev in s.events {
            snap.last_t
                .entry(ev.session_id.clone())
                .and_modify(|t| *t = (*t).max(ev.t_ms))
                .or_insert(ev.t_ms);
            events.push(ev);
        }
        snap.offset += s.consumed as u64;
        snap.skipped += s.skipped;
        Ok(())
    }

    pub fn refresh(&self) -> Result<(), StoreError> {
        let mut snap = self.lock_snapshot();
        self.refresh_locked(&mut snap)
    }

    /// Durably appends one event. Returns once the line is synced to disk.
    pub fn append(&self, event: &Event) -> Result<(), StoreError> {
        event.validate()?;
        let writer = self.writer.as_ref().ok_or(StoreError::ReadOnly)?;
        let mut file = writer.lock().unwrap_or_else(|p| p.into_inner());
        let mut snap = self.lock_snapshot();
        self.refresh_locked(&mut snap)?;
        if let Some(&last) = snap.last_t.get(&event.session_id) {
            if event.t_ms < last {
                return Err(StoreError::Order {
                    session: event.session_id.clone(),
                    last,
                    t_ms: event.t_ms,
                });
            }
        }
        let mut line = event.to_line();
        line.push('\n');
        let io_err = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        file.write_all(line.as_bytes()).map_err(io_err)?;
        file.flush().map_err(io_err)?;
        file.sync_data().map_err(io_err)?;
        self.refresh_locked(&mut snap)
    }

    /// Current events in append order.
    pub fn events(&self) -> Result<Arc<Vec<Event>>, StoreError> {
        let mut snap = self.lock_snapshot();
        self.refresh_locked(&mut snap)?;
        Ok(Arc::clone(&snap.events))
    }

    /// Per-kind totals, optionally for a single session.
    pub fn summary(&self, session: Option<&str>) -> Result<Summary, StoreError> {
        let events = self.events()?;
        let mut s = Summary::default();
        for ev in events.iter().filter(|e| session.is_none_or(|id| e.session_id == id)) {
            s.count(ev.kind);
        }
        Ok(s)
    }

    /// Events of `kind` (all kinds when `None`) in append order, paginated.
    pub fn list_events(&self, kind: Option<EventKind>, limit: Option<usize>, offset: usize) -> Result<Vec<Event>, StoreError> {
        let events = self.events()?;
        Ok(events
            .iter()
            .filter(|e| kind.is_none_or(|k| e.kind == k))
            .skip(offset)
            .take(limit.unwrap_or(usize::MAX))
            .cloned()
            .collect())
    }

    /// Lines skipped because they could not be parsed.
    pub fn skipped_lines(&self) -> usize {
        self.lock_snapshot().skipped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(kind: EventKind, t: u64) -> Event {
        Event::new(kind, t, "s1", replay_wall_time(t))
    }

    #[test]
    fn wall_time_format() {
        assert_eq!(replay_wall_time(0), "1970-01-01T00:00:00.000Z");
        assert_eq!(replay_wall_time(61_234), "1970-01-01T00:01:01.234Z");
    }

    #[test]
    fn line_format() {
        assert_eq!(
            ev(EventKind::Alarm, 2000).to_line(),
            r#"{"kind": "alarm", "t_ms": 2000, "session": "s1", "wall": "1970-01-01T00:00:02.000Z"}"#
        );
    }

    #[test]
    fn append_and_query() {
        let dir = tempfile::tempdir().unwrap();
        let store = EventStore::open(dir.path().join("events.jsonl")).unwrap();
        assert_eq!(store.summary(None).unwrap(), Summary::default());
        assert!(store.list_events(Some(EventKind::Alarm), None, 0).unwrap().is_empty());
        store.append(&ev(EventKind::Yawn, 10)).unwrap();
        assert_eq!(store.summary(None).unwrap(), Summary { yawns: 1, alarms: 0 });
        for t in [20, 30, 40] {
            store.append(&ev(EventKind::Alarm, t)).unwrap();
        }
        store.append(&ev(EventKind::Yawn, 50)).unwrap();
        assert_eq!(store.summary(None).unwrap(), Summary { yawns: 2, alarms: 3 });
        let page = store.list_events(None, Some(2), 1).unwrap();
        assert_eq!(page.iter().map(|e| e.t_ms).collect::<Vec<_>>(), vec![20, 30]);
        assert_eq!(store.summary(Some("other")).unwrap(), Summary::default());
    }

    #[test]
    fn rejects_out_of_order_within_session() {
        let dir = tempfile::tempdir().unwrap();
        let store = EventStore::open(dir.path().join("e.jsonl")).unwrap();
        store.append(&ev(EventKind::Alarm, 100)).unwrap();
        assert!(matches!(store.append(&ev(EventKind::Alarm, 99)), Err(StoreError::Order { last: 100, .. })));
        store
            .append(&Event::new(EventKind::Alarm, 5, "s2", replay_wall_time(5)))
            .unwrap();
        assert_eq!(store.events().unwrap().len(), 2);
    }

    #[test]
    fn rejects_bad_wall_time() {
        let dir = tempfile::tempdir().unwrap();
        let store = EventStore::open(dir.path().join("e.jsonl")).unwrap();
        let bad = Event::new(EventKind::Yawn, 1, "s", "yesterday");
        assert!(matches!(store.append(&bad), Err(StoreError::InvalidEvent(_))));
    }

    #[test]
    fn read_only_never_creates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing.jsonl");
        let store = EventStore::open_read_only(&path).unwrap();
        assert_eq!(store.summary(None).unwrap(), Summary::default());
        assert!(matches!(store.append(&ev(EventKind::Yawn, 1)), Err(StoreError::ReadOnly)));
        assert!(!path.exists());
    }

    #[test]
    fn torn_tail_is_skipped_then_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        {
            let store = EventStore::open(&path).unwrap();
            store.append(&ev(EventKind::Alarm, 1)).unwrap();
            store.append(&ev(EventKind::Yawn, 2)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"kind": "alarm", "t_ms": 3, "sess"#).unwrap();
        drop(f);

        let reader = EventStore::open_read_only(&path).unwrap();
        assert_eq!(reader.summary(None).unwrap(), Summary { yawns: 1, alarms: 1 });
        assert_eq!(read_events(&path).unwrap().len(), 2);

        let store = EventStore::open(&path).unwrap();
        store.append(&ev(EventKind::Alarm, 3)).unwrap();
        assert_eq!(read_events(&path).unwrap().len(), 3);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
    }

    #[test]
    fn reader_sees_other_writer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        let writer = EventStore::open(&path).unwrap();
        let reader = EventStore::open_read_only(&path).unwrap();
        assert_eq!(reader.summary(None).unwrap().alarms, 0);
        writer.append(&ev(EventKind::Alarm, 1)).unwrap();
        assert_eq!(reader.summary(None).unwrap().alarms, 1);
    }
}
