//! Launch traces: timed scripts of station requests that drive a session
//! offline, and a seeded generator of synthetic visitors.
//!
//! A trace file holds one JSON record per line:
//!
//! ```text
//! {"t_ms": 1200, "event": "launch", "station": 3}
//! ```
//!
//! Timestamps are milliseconds from session start and never decrease.
//! Blank lines are ignored.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::loopgen::{LoopLibrary, STATION_COUNT};
use crate::render::{mix_session, write_wav_file, MixOutput, RenderError};
use crate::scheduler::{replay, write_event_log, LaunchOutcome, ScheduleEvent, SchedulerConfig, SchedulerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    Launch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub t_ms: u64,
    pub event: TraceEvent,
    pub station: u8,
}

impl TraceRecord {
    pub fn launch(t_ms: u64, station: u8) -> Self {
        Self {
            t_ms,
            event: TraceEvent::Launch,
            station,
        }
    }

    /// First sample at or after `t_ms`.
    pub fn sample(&self, sample_rate_hz: u32) -> u64 {
        (u128::from(self.t_ms) * u128::from(sample_rate_hz)).div_ceil(1000) as u64
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("TraceParseError at line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceParseError> {
    let mut records: Vec<TraceRecord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| TraceParseError { line, message };
        let rec: TraceRecord = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if !(1..=STATION_COUNT).contains(&rec.station) {
            return Err(err(format!("station {} is outside 1..={STATION_COUNT}", rec.station)));
        }
        if let Some(prev) = records.last() {
            if rec.t_ms < prev.t_ms {
                return Err(err(format!("t_ms {} goes backwards from {}", rec.t_ms, prev.t_ms)));
            }
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_trace(records: &[TraceRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Parse(#[from] TraceParseError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRender {
    pub measures: u64,
    pub events: Vec<ScheduleEvent>,
    /// One entry per trace record that fell inside the session.
    pub outcomes: Vec<LaunchOutcome>,
    pub mix: MixOutput,
}

/// Scheduler pass only: events and outcomes for `measures` measures.
/// Requests at or past the session end are dropped.
pub fn schedule_trace(
    records: &[TraceRecord],
    config: &SchedulerConfig,
    measures: u64,
) -> Result<(Vec<ScheduleEvent>, Vec<LaunchOutcome>), SchedulerError> {
    let end = measures * config.timebase.samples_per_measure();
    let rate = config.timebase.sample_rate_hz();
    let requests: Vec<(u8, u64)> = records
        .iter()
        .map(|r| (r.station, r.sample(rate)))
        .collect();
    let (_, events, outcomes) = replay(*config, &requests, end)?;
    Ok((events, outcomes))
}

/// Schedules and mixes a whole session in memory.
pub fn render_trace(
    records: &[TraceRecord],
    library: &LoopLibrary,
    config: &SchedulerConfig,
    measures: u64,
    exec: Exec,
) -> Result<SessionRender, TraceError> {
    let (events, outcomes) = schedule_trace(records, config, measures)?;
    let mix = mix_session(&events, library, measures, &config.timebase, exec)?;
    Ok(SessionRender {
        measures,
        events,
        outcomes,
        mix,
    })
}

/// `session.wav` → `session.events.jsonl`.
pub fn event_log_path(wav_path: &Path) -> PathBuf {
    wav_path.with_extension("events.jsonl")
}

/// Reads a trace file, renders it and writes the WAV plus its event log.
pub fn run_trace(
    trace_path: &Path,
    out_wav: &Path,
    library: &LoopLibrary,
    config: &SchedulerConfig,
    measures: u64,
    exec: Exec,
) -> Result<SessionRender, TraceError> {
    let records = parse_trace(&std::fs::read_to_string(trace_path)?)?;
    let session = render_trace(&records, library, config, measures, exec)?;
    write_wav_file(&session.mix.pcm, out_wav)?;
    std::fs::write(event_log_path(out_wav), write_event_log(&session.events))?;
    Ok(session)
}

/// Synthetic visitors: exponential inter-arrival times at
/// `launches_per_minute`, uniform station choice, over `duration_s`.
pub fn simulate_trace(launches_per_minute: f64, duration_s: f64, seed: u64) -> Vec<TraceRecord> {
    let mut out = Vec::new();
    if !(launches_per_minute > 0.0 && launches_per_minute.is_finite()) || duration_s <= 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(launches_per_minute / 60_000.0).expect("positive rate");
    let limit_ms = duration_s * 1000.0;
    let mut t = 0.0f64;
    loop {
        t += gap.sample(&mut rng);
        if t >= limit_ms {
            break;
        }
        out.push(TraceRecord::launch(t.floor() as u64, rng.random_range(1..=STATION_COUNT)));
    }
    out
}
