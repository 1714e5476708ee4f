//! Append-only event log. A single appender thread owns the file and assigns
//! event ids; readers take a consistent snapshot of the events written so far.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, RwLock};
use std::thread;

use learnprof_core::telemetry::{EventKind, StoredEvent};
use serde_json::value::RawValue;
use tokio::sync::oneshot;

/// Requests drained per batch; one fsync covers the batch.
const MAX_BATCH: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("event store I/O: {0}")]
    Io(#[from] io::Error),
    #[error("{path}:{line}: corrupt event log: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("event store unavailable: {0}")]
    Unavailable(String),
    #[error("body is not valid JSON: {0}")]
    InvalidBody(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub event_id: u64,
    pub received_at_ms: i64,
}

/// Which events an export includes. Times are server receive times in ms;
/// `from` is inclusive and `to` exclusive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExportFilter {
    pub kind: Option<EventKind>,
    pub from_ms: Option<i64>,
    pub to_ms: Option<i64>,
}

impl ExportFilter {
    pub fn admits(&self, ev: &StoredEvent) -> bool {
        self.kind.is_none_or(|k| k == ev.kind)
            && self.from_ms.is_none_or(|t| ev.received_at_ms >= t)
            && self.to_ms.is_none_or(|t| ev.received_at_ms < t)
    }
}

struct Request {
    kind: EventKind,
    flags: Vec<String>,
    body: Box<RawValue>,
    reply: oneshot::Sender<Result<Ack, StoreError>>,
}

struct Shared {
    events: RwLock<Vec<Arc<StoredEvent>>>,
    failed: AtomicBool,
}

/// Handle to the store; cheap to clone.
#[derive(Clone)]
pub struct EventStore {
    shared: Arc<Shared>,
    tx: mpsc::Sender<Request>,
    path: Option<PathBuf>,
}

impl EventStore {
    /// A store that keeps events in memory only.
    pub fn in_memory() -> Self {
        Self::start(None, Vec::new())
    }

    /// Opens (or creates) a log file and replays the events already in it.
    /// A truncated final line left by a crash is cut off.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        let complete = match text.rfind('\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < text.len() {
            tracing::warn!(
                path = %path.display(),
                bytes = text.len() - complete,
                "dropping incomplete final line"
            );
            file.set_len(complete as u64)?;
            text.truncate(complete);
        }
        let events = parse_log(path, &text)?;
        Ok(Self::start(Some((file, path.to_path_buf())), events))
    }

    fn start(file: Option<(File, PathBuf)>, events: Vec<StoredEvent>) -> Self {
        let next_id = events.last().map_or(1, |e| e.event_id + 1);
        let last_ms = events.last().map_or(i64::MIN, |e| e.received_at_ms);
        let shared = Arc::new(Shared {
            events: RwLock::new(events.into_iter().map(Arc::new).collect()),
            failed: AtomicBool::new(false),
        });
        let (tx, rx) = mpsc::channel();
        let path = file.as_ref().map(|(_, p)| p.clone());
        let worker = Appender {
            shared: Arc::clone(&shared),
            file: file.map(|(f, _)| f),
            next_id,
            last_ms,
        };
        thread::Builder::new()
            .name("event-appender".into())
            .spawn(move || worker.run(rx))
            .expect("spawn appender thread");
        EventStore { shared, tx, path }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Appends one event and waits until it is durable.
    pub async fn append(
        &self,
        kind: EventKind,
        flags: Vec<String>,
        body: &str,
    ) -> Result<Ack, StoreError> {
        let body = single_line_body(body)?;
        if self.shared.failed.load(Ordering::Acquire) {
            return Err(StoreError::Unavailable("an earlier write failed".into()));
        }
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Request {
                kind,
                flags,
                body,
                reply,
            })
            .map_err(|_| StoreError::Unavailable("appender stopped".into()))?;
        rx.await
            .map_err(|_| StoreError::Unavailable("appender stopped".into()))?
    }

    /// Events written so far, in id order.
    pub fn snapshot(&self) -> Vec<Arc<StoredEvent>> {
        self.shared.events.read().expect("events lock").clone()
    }

    pub fn len(&self) -> usize {
        self.shared.events.read().expect("events lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// NDJSON export of the matching events, one per line.
    pub fn export(&self, filter: &ExportFilter) -> String {
        let mut out = String::new();
        for ev in self.snapshot().iter().filter(|e| filter.admits(e)) {
            out.push_str(&ev.to_line());
            out.push('\n');
        }
        out
    }
}

/// Request bodies are stored verbatim. Raw line breaks can only occur as
/// insignificant whitespace in valid JSON, so they are replaced by spaces to
/// keep one event per line.
fn single_line_body(body: &str) -> Result<Box<RawValue>, StoreError> {
    let text = if body.contains(['\n', '\r']) {
        body.replace(['\n', '\r'], " ")
    } else {
        body.to_string()
    };
    RawValue::from_string(text.trim().to_string())
        .map_err(|e| StoreError::InvalidBody(e.to_string()))
}

fn parse_log(path: &Path, text: &str) -> Result<Vec<StoredEvent>, StoreError> {
    let mut events: Vec<StoredEvent> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let ev: StoredEvent = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        if let Some(prev) = events.last() {
            if ev.event_id <= prev.event_id {
                return Err(corrupt(format!(
                    "event id {} does not follow {}",
                    ev.event_id, prev.event_id
                )));
            }
        }
        events.push(ev);
    }
    Ok(events)
}

struct Appender {
    shared: Arc<Shared>,
    file: Option<File>,
    next_id: u64,
    last_ms: i64,
}

impl Appender {
    fn run(mut self, rx: mpsc::Receiver<Request>) {
        while let Ok(first) = rx.recv() {
            let mut batch = vec![first];
            while batch.len() < MAX_BATCH {
                match rx.try_recv() {
                    Ok(req) => batch.push(req),
                    Err(_) => break,
                }
            }
            self.write_batch(batch);
        }
    }

    fn write_batch(&mut self, batch: Vec<Request>) {
        if self.shared.failed.load(Ordering::Acquire) {
            for req in batch {
                let _ = req.reply.send(Err(StoreError::Unavailable(
                    "an earlier write failed".into(),
                )));
            }
            return;
        }
        // Receive times never go backwards, so id order and time order agree.
        let now = chrono::Utc::now().timestamp_millis().max(self.last_ms);
        let mut events = Vec::with_capacity(batch.len());
        let mut replies = Vec::with_capacity(batch.len());
        let mut buf = String::new();
        for (offset, req) in batch.into_iter().enumerate() {
            let ev = StoredEvent {
                event_id: self.next_id + offset as u64,
                received_at_ms: now,
                kind: req.kind,
                flags: req.flags,
                body: req.body,
            };
            buf.push_str(&ev.to_line());
            buf.push('\n');
            replies.push((req.reply, ev.event_id));
            events.push(Arc::new(ev));
        }
        let written = match self.file.as_mut() {
            Some(f) => f.write_all(buf.as_bytes()).and_then(|_| f.sync_data()),
            None => Ok(()),
        };
        match written {
            Ok(()) => {
                self.next_id += events.len() as u64;
                self.last_ms = now;
                self.shared
                    .events
                    .write()
                    .expect("events lock")
                    .extend(events);
                for (reply, event_id) in replies {
                    let _ = reply.send(Ok(Ack {
                        event_id,
                        received_at_ms: now,
                    }));
                }
            }
            Err(e) => {
                tracing::error!(error = %e, "event log write failed; store is now read-only");
                self.shared.failed.store(true, Ordering::Release);
                for (reply, _) in replies {
                    let _ = reply.send(Err(StoreError::Unavailable(e.to_string())));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rt() -> tokio::runtime::Runtime {
        tokio::runtime::Builder::new_current_thread()
            .build()
            .unwrap()
    }

    #[test]
    fn ids_start_at_one_and_increase() {
        let store = EventStore::in_memory();
        let ids: Vec<u64> = rt().block_on(async {
            let mut ids = Vec::new();
            for i in 0..5 {
                let body = format!(r#"{{"n":{i}}}"#);
                ids.push(store.append(EventKind::BugReport, vec![], &body).await.unwrap().event_id);
            }
            ids
        });
        assert_eq!(ids, vec![1, 2, 3, 4, 5]);
        assert_eq!(store.len(), 5);
    }

    #[test]
    fn multiline_body_becomes_one_line() {
        let store = EventStore::in_memory();
        rt().block_on(store.append(EventKind::BugReport, vec![], "{\n  \"a\": 1\n}\n"))
            .unwrap();
        let out = store.export(&ExportFilter::default());
        assert_eq!(out.lines().count(), 1);
        assert!(out.contains(r#""body":{   "a": 1 }"#), "{out}");
    }

    #[test]
    fn invalid_body_rejected_without_write() {
        let store = EventStore::in_memory();
        assert!(rt()
            .block_on(store.append(EventKind::BugReport, vec![], "{nope"))
            .is_err());
        assert!(store.is_empty());
    }

    #[test]
    fn reopen_replays_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.ndjson");
        {
            let store = EventStore::open(&path).unwrap();
            rt().block_on(async {
                store.append(EventKind::BugReport, vec![], r#"{"a":1}"#).await.unwrap();
                store.append(EventKind::Answers, vec!["x".into()], r#"{"b":2}"#).await.unwrap();
            });
        }
        // Simulate a crash halfway through a write.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"eventId":3,"rece"#).unwrap();
        drop(f);

        let store = EventStore::open(&path).unwrap();
        assert_eq!(store.len(), 2);
        let ack = rt()
            .block_on(store.append(EventKind::BugReport, vec![], r#"{"c":3}"#))
            .unwrap();
        assert_eq!(ack.event_id, 3);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text, store.export(&ExportFilter::default()));
    }

    #[test]
    fn corrupt_log_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.ndjson");
        std::fs::write(&path, "not json\n").unwrap();
        match EventStore::open(&path) {
            Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 1),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("corrupt log accepted"),
        }
    }

    #[test]
    fn filter_by_kind_and_time() {
        let store = EventStore::in_memory();
        let (a, b) = rt().block_on(async {
            let a = store.append(EventKind::Answers, vec![], "{}").await.unwrap();
            let b = store.append(EventKind::BugReport, vec![], "{}").await.unwrap();
            (a, b)
        });
        let only = |f: ExportFilter| store.export(&f).lines().count();
        assert_eq!(only(ExportFilter::default()), 2);
        assert_eq!(
            only(ExportFilter {
                kind: Some(EventKind::Answers),
                ..Default::default()
            }),
            1
        );
        assert_eq!(
            only(ExportFilter {
                to_ms: Some(a.received_at_ms),
                ..Default::default()
            }),
            0
        );
        assert_eq!(
            only(ExportFilter {
                from_ms: Some(b.received_at_ms),
                ..Default::default()
            }),
            if a.received_at_ms == b.received_at_ms { 2 } else { 1 }
        );
    }
}
