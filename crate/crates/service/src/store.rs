//! Append-only JSONL persistence: one log file per session plus an index of
//! created sessions.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use yonder_core::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SurveySubmitted,
    PortraitUploaded,
    BackstoryReady,
    Message,
    StageChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub session_id: String,
    pub sequence: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub session_id: String,
    pub condition: Condition,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct EventStore {
    root: PathBuf,
}

fn corrupt(path: &Path, line: usize, e: serde_json::Error) -> std::io::Error {
    std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        format!("{}:{}: {e}", path.display(), line + 1),
    )
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| corrupt(path, i, e))?);
    }
    Ok(out)
}

/// Writes one line with a single `write_all`, so an entry is either fully
/// present or absent after a crash (a torn final line fails to parse and is
/// reported).
fn append_line<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(value).map_err(std::io::Error::other)?;
    line.push(b'\n');
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(&line)?;
    file.sync_data()
}

impl EventStore {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn index_path(&self) -> PathBuf {
        self.root.join("index.jsonl")
    }

    pub fn log_path(&self, session_id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{session_id}.jsonl"))
    }

    pub fn index(&self) -> std::io::Result<Vec<IndexEntry>> {
        read_jsonl(&self.index_path())
    }

    /// Writes the session's first event, then its index line; the log is
    /// removed again if indexing fails.
    pub fn create(&self, entry: &IndexEntry, first: &EventLogEntry) -> std::io::Result<()> {
        let log = self.log_path(&entry.session_id);
        if log.exists() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("session {} already exists", entry.session_id),
            ));
        }
        append_line(&log, first)?;
        if let Err(e) = append_line(&self.index_path(), entry) {
            let _ = fs::remove_file(&log);
            return Err(e);
        }
        Ok(())
    }

    pub fn append(&self, entry: &EventLogEntry) -> std::io::Result<()> {
        append_line(&self.log_path(&entry.session_id), entry)
    }

    pub fn events(&self, session_id: &str) -> std::io::Result<Vec<EventLogEntry>> {
        let events: Vec<EventLogEntry> = read_jsonl(&self.log_path(session_id))?;
        for (i, e) in events.iter().enumerate() {
            if e.sequence != i as u64 || e.session_id != session_id {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("session {session_id}: event {i} has sequence {}", e.sequence),
                ));
            }
        }
        Ok(events)
    }
}
