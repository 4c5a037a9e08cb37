//! Append-only session log, one JSON object per line, flushed per entry.
//!
//! ```text
//! {"wall_ms":12,"sample":0,"request":{"station":3}}
//! {"wall_ms":1905,"sample":84000,"event":{"at_sample":84000,"measure":1,"kind":"BedFadeOut","bed":6,"fade_measures":2}}
//! {"wall_ms":1906,"sample":84000,"clock":{}}
//! ```
//!
//! `sample` is the session clock when the entry was written. Requests
//! replayed at their recorded samples reproduce every logged event.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use interlock_core::scheduler::{new_state, ScheduleEvent, SchedulerConfig, SchedulerError, SoundtrackState};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBody {
    Request { station: u8 },
    Event(ScheduleEvent),
    /// Clock position marker, written when the clock moves without events.
    Clock {},
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub wall_ms: u64,
    pub sample: u64,
    #[serde(flatten)]
    pub body: LogBody,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("session log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("session log disagrees with replay: {0}")]
    Diverged(String),
}

#[derive(Debug, Default)]
pub struct SessionLog {
    entries: Vec<LogEntry>,
    sink: Option<BufWriter<File>>,
}

impl SessionLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Appends to `path`, creating it if needed. Existing entries are loaded
    /// (a torn final line is dropped and truncated away).
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let entries = if path.exists() {
            let text = std::fs::read_to_string(path)?;
            let (entries, valid_len) = parse_log_prefix(&text)?;
            if valid_len < text.len() {
                OpenOptions::new().write(true).open(path)?.set_len(valid_len as u64)?;
            }
            entries
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries,
            sink: Some(BufWriter::new(file)),
        })
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn last_wall_ms(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.wall_ms)
    }

    pub fn append(&mut self, entry: LogEntry) -> Result<(), LogError> {
        let wall_ms = entry.wall_ms.max(self.last_wall_ms());
        let entry = LogEntry { wall_ms, ..entry };
        if let Some(sink) = &mut self.sink {
            serde_json::to_writer(&mut *sink, &entry).map_err(std::io::Error::from)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }
}

/// Parses complete lines; a malformed final line without a trailing
/// newline is treated as a torn write. Returns entries and the byte length
/// of the valid prefix.
pub fn parse_log_prefix(text: &str) -> Result<(Vec<LogEntry>, usize), LogError> {
    let mut entries = Vec::new();
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            offset += line.len();
            continue;
        }
        match serde_json::from_str::<LogEntry>(line) {
            Ok(e) => entries.push(e),
            Err(_) if !complete => break,
            Err(e) => {
                return Err(LogError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
        offset += line.len();
    }
    Ok((entries, offset))
}

/// Rebuilds scheduler state from a log: replays every request at its
/// recorded sample, advances to the last recorded clock position and checks
/// the regenerated events against the logged ones.
pub fn recover(config: &SchedulerConfig, entries: &[LogEntry]) -> Result<SoundtrackState, LogError> {
    let diverged = |e: SchedulerError| LogError::Diverged(e.to_string());
    let mut state = new_state(*config).map_err(diverged)?;
    let mut events = Vec::new();
    for e in entries {
        if let LogBody::Request { station } = e.body {
            events.extend(state.advance_to(e.sample));
            // Outcomes are recomputed rather than read back.
            let _ = state.request_launch(station, e.sample);
        }
    }
    let clock = entries.iter().map(|e| e.sample).max().unwrap_or(0);
    events.extend(state.advance_to(clock));
    let logged: Vec<&ScheduleEvent> = entries
        .iter()
        .filter_map(|e| match &e.body {
            LogBody::Event(ev) => Some(ev),
            _ => None,
        })
        .collect();
    if let Some(i) = (0..events.len().max(logged.len())).find(|&i| events.get(i) != logged.get(i).copied()) {
        return Err(LogError::Diverged(format!(
            "event {i}: logged {:?}, replayed {:?}",
            logged.get(i),
            events.get(i)
        )));
    }
    Ok(state)
}
