//! Append-only event log with periodic snapshots.
//!
//! `events.jsonl` holds one event per line and is never rewritten, except that
//! a torn final line (a write interrupted by a crash, never acknowledged) is
//! cut off on open. `snapshot.json` holds the state up to some event id and is
//! replaced atomically.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::state::{EventBody, ServiceState, SessionEvent};
use crate::ServiceError;

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Serialize, Deserialize)]
struct Snapshot {
    state: ServiceState,
}

pub struct Store {
    dir: PathBuf,
    log: File,
    state: ServiceState,
    snapshot_every: u64,
    since_snapshot: u64,
}

fn store_err(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Store(format!("{}: {e}", path.display()))
}

/// Reads the log, dropping a torn last line. Returns the events and the byte
/// length of the intact prefix.
fn read_log(path: &Path) -> Result<(Vec<SessionEvent>, u64), ServiceError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(store_err(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut events: Vec<SessionEvent> = Vec::new();
    let mut good = 0u64;
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| store_err(path, e))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let complete = line.ends_with('\n');
        match serde_json::from_str::<SessionEvent>(line.trim_end()) {
            Ok(ev) if complete => {
                if let Some(prev) = events.last() {
                    if ev.event_id <= prev.event_id {
                        return Err(store_err(path, format!("line {lineno}: event ids not increasing")));
                    }
                }
                events.push(ev);
                good += n as u64;
            }
            _ => {
                let mut rest = String::new();
                reader.read_line(&mut rest).map_err(|e| store_err(path, e))?;
                if !rest.is_empty() {
                    return Err(store_err(path, format!("line {lineno}: corrupt event")));
                }
                log::warn!("dropping torn final line {lineno} of {}", path.display());
                break;
            }
        }
    }
    Ok((events, good))
}

/// Full event history of a store directory.
pub fn read_events(dir: &Path) -> Result<Vec<SessionEvent>, ServiceError> {
    Ok(read_log(&dir.join(LOG_FILE))?.0)
}

/// State rebuilt from the log alone, ignoring any snapshot.
pub fn replay(dir: &Path) -> Result<ServiceState, ServiceError> {
    let mut state = ServiceState::default();
    for e in read_events(dir)? {
        state.apply(&e);
    }
    Ok(state)
}

impl Store {
    pub fn open(dir: &Path, snapshot_every: u64) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir).map_err(|e| store_err(dir, e))?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let mut state = match std::fs::read_to_string(&snap_path) {
            Ok(text) => serde_json::from_str::<Snapshot>(&text).map_err(|e| store_err(&snap_path, e))?.state,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => ServiceState::default(),
            Err(e) => return Err(store_err(&snap_path, e)),
        };
        let log_path = dir.join(LOG_FILE);
        let (events, good) = read_log(&log_path)?;
        let mut since_snapshot = 0;
        let base = state.last_event_id;
        for e in events.iter().filter(|e| e.event_id > base) {
            state.apply(e);
            since_snapshot += 1;
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| store_err(&log_path, e))?;
        if log.metadata().map_err(|e| store_err(&log_path, e))?.len() > good {
            log.set_len(good).map_err(|e| store_err(&log_path, e))?;
            log.sync_all().map_err(|e| store_err(&log_path, e))?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
            state,
            snapshot_every: snapshot_every.max(1),
            since_snapshot,
        })
    }

    pub fn state(&self) -> &ServiceState {
        &self.state
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes the events, syncs them to disk, then applies them. Nothing is
    /// applied if the write fails.
    pub fn append(&mut self, items: Vec<(Option<String>, EventBody)>) -> Result<Vec<SessionEvent>, ServiceError> {
        let mut next = self.state.last_event_id;
        let now = Utc::now();
        let events: Vec<SessionEvent> = items
            .into_iter()
            .map(|(session_id, body)| {
                next += 1;
                SessionEvent {
                    event_id: next,
                    session_id,
                    body,
                    timestamp: now,
                }
            })
            .collect();
        let mut buf = Vec::new();
        for e in &events {
            serde_json::to_writer(&mut buf, e).map_err(|e| ServiceError::Store(e.to_string()))?;
            buf.push(b'\n');
        }
        let path = self.dir.join(LOG_FILE);
        self.log.write_all(&buf).map_err(|e| store_err(&path, e))?;
        self.log.sync_data().map_err(|e| store_err(&path, e))?;
        for e in &events {
            self.state.apply(e);
        }
        self.since_snapshot += events.len() as u64;
        if self.since_snapshot >= self.snapshot_every {
            if let Err(e) = self.snapshot() {
                log::warn!("snapshot failed: {e}");
            }
        }
        Ok(events)
    }

    /// Replaces the snapshot with the current state (write, sync, rename).
    pub fn snapshot(&mut self) -> Result<(), ServiceError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join("snapshot.json.tmp");
        let text = serde_json::to_vec(&Snapshot {
            state: self.state.clone(),
        })
        .map_err(|e| ServiceError::Store(e.to_string()))?;
        let mut f = File::create(&tmp).map_err(|e| store_err(&tmp, e))?;
        f.write_all(&text).map_err(|e| store_err(&tmp, e))?;
        f.sync_all().map_err(|e| store_err(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| store_err(&path, e))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        self.since_snapshot = 0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mhfa_core::analysis::open_session;
    use mhfa_core::templates::Scenario;

    fn opened(id: &str) -> (Option<String>, EventBody) {
        (
            Some(id.into()),
            EventBody::SessionOpened(open_session(id, "p", Scenario::Nutrition, None, None, 12)),
        )
    }

    #[test]
    fn reopen_restores_state_and_snapshot_matches_replay() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::open(dir.path(), 2).unwrap();
            s.append(vec![opened("a")]).unwrap();
            s.append(vec![opened("b"), opened("c")]).unwrap();
            s.append(vec![opened("d")]).unwrap();
        }
        let s = Store::open(dir.path(), 2).unwrap();
        assert_eq!(s.state().sessions.len(), 4);
        assert_eq!(s.state().last_event_id, 4);
        assert_eq!(&replay(dir.path()).unwrap(), s.state());
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::open(dir.path(), 100).unwrap();
            s.append(vec![opened("a")]).unwrap();
        }
        let log = dir.path().join(LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"event_id\":2,\"ki").unwrap();
        drop(f);
        let mut s = Store::open(dir.path(), 100).unwrap();
        assert_eq!(s.state().last_event_id, 1);
        s.append(vec![opened("b")]).unwrap();
        assert_eq!(read_events(dir.path()).unwrap().len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(LOG_FILE), "garbage\n{}\n").unwrap();
        assert!(Store::open(dir.path(), 10).is_err());
    }
}
