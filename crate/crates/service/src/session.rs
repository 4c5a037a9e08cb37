//! The session: one scheduler, its log, and the shared audio assets.
//!
//! [`Session`] is plain synchronous state. [`spawn`] wraps it in a task
//! that owns it exclusively and serves an ordered command queue; events go
//! out on a broadcast channel and read-only snapshots on a watch channel.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use interlock_core::loopgen::{generate_library, LoopLibrary};
use interlock_core::render::{
    plan_session, render_announcement, wav_bytes, MixOutput, PcmBuffer, RenderError, SourceBank, SourceKey,
};
use interlock_core::scheduler::{new_state, ScheduleEvent, SchedulerConfig, SoundtrackState, StateDocument};
use interlock_core::Exec;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use crate::config::{ConfigError, SessionConfig};
use crate::log::{recover, LogBody, LogEntry, LogError, SessionLog};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("library: {0}")]
    Library(String),
    #[error("session task has stopped")]
    Stopped,
}

/// Rendered material shared read-only by every request handler.
pub struct Assets {
    pub library: LoopLibrary,
    pub bank: SourceBank,
    wavs: HashMap<String, Arc<Vec<u8>>>,
}

impl Assets {
    pub fn build(library: LoopLibrary, exec: Exec) -> Result<Self, SessionError> {
        let config = library.config;
        let bank = SourceBank::for_library(&library, &config, exec)?;
        let rate = config.sample_rate_hz();
        let mut wavs = HashMap::new();
        for lp in library.beds.iter().chain(&library.collages) {
            let mono = bank.get(&SourceKey::Loop(lp.id.clone())).expect("bank covers library");
            wavs.insert(lp.id.clone(), Arc::new(wav_bytes(&PcmBuffer::from_mono(mono, rate))));
        }
        let rendered = exec.map(&library.announcements, |a| render_announcement(a, &config));
        for (a, pcm) in library.announcements.iter().zip(rendered) {
            wavs.insert(a.id.clone(), Arc::new(wav_bytes(&pcm?)));
        }
        Ok(Self { library, bank, wavs })
    }

    /// Generates from the seed, or loads `library_path` when set.
    pub fn for_config(config: &SessionConfig, exec: Exec) -> Result<Self, SessionError> {
        let library = match &config.library_path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| SessionError::Library(format!("{}: {e}", path.display())))?;
                let lib = LoopLibrary::from_json(&text).map_err(|e| SessionError::Library(e.to_string()))?;
                if lib.config != config.timebase().map_err(ConfigError::from)? {
                    return Err(SessionError::Library("library timebase differs from the session's".into()));
                }
                lib
            }
            None => generate_library(config.seed, &config.timebase().map_err(ConfigError::from)?, exec)
                .map_err(|e| SessionError::Library(e.to_string()))?,
        };
        Self::build(library, exec)
    }

    pub fn loop_wav(&self, id: &str) -> Option<Arc<Vec<u8>>> {
        self.wavs.get(id).cloned()
    }
}

/// One message on the live feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum StreamMessage {
    /// Full state; always the first message a subscriber sees.
    Snapshot(StateDocument),
    Schedule(ScheduleEvent),
    /// Heartbeat after each measure boundary is processed.
    Tick { measure: u64, at_sample: u64 },
}

impl StreamMessage {
    pub fn name(&self) -> &'static str {
        match self {
            StreamMessage::Snapshot(_) => "snapshot",
            StreamMessage::Schedule(_) => "schedule",
            StreamMessage::Tick { .. } => "tick",
        }
    }

    /// Payload alone, as carried in an SSE `data:` field.
    pub fn data_json(&self) -> String {
        match self {
            StreamMessage::Snapshot(doc) => doc.to_json(),
            StreamMessage::Schedule(ev) => ev.to_json_line(),
            StreamMessage::Tick { measure, at_sample } => {
                serde_json::json!({ "measure": measure, "at_sample": at_sample }).to_string()
            }
        }
    }
}

/// Reply to `POST /launch`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchDocument {
    pub accepted: bool,
    pub station: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_id: Option<String>,
    /// Note name, e.g. `G3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bell_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_sample: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub announce_measure: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_measure: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_measure: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AudioError {
    #[error("measure {requested} has not been reached (clock is in measure {current})")]
    NotYet { requested: u64, current: u64 },
    #[error("render: {0}")]
    Render(String),
}

pub struct Session {
    config: SessionConfig,
    scheduler: SchedulerConfig,
    state: SoundtrackState,
    assets: Arc<Assets>,
    events: Vec<ScheduleEvent>,
    log: SessionLog,
}

impl Session {
    /// Starts fresh, or resumes from `log` if it already holds entries.
    pub fn new(config: SessionConfig, assets: Arc<Assets>, log: SessionLog) -> Result<Self, SessionError> {
        config.validate()?;
        let scheduler = config.scheduler_config()?;
        let state = if log.entries().is_empty() {
            new_state(scheduler).map_err(|e| ConfigError::Invalid(e.to_string()))?
        } else {
            recover(&scheduler, log.entries())?
        };
        let events = log
            .entries()
            .iter()
            .filter_map(|e| match &e.body {
                LogBody::Event(ev) => Some(ev.clone()),
                _ => None,
            })
            .collect();
        Ok(Self {
            config,
            scheduler,
            state,
            assets,
            events,
            log,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn assets(&self) -> &Arc<Assets> {
        &self.assets
    }

    pub fn current_sample(&self) -> u64 {
        self.state.current_sample()
    }

    pub fn samples_per_measure(&self) -> u64 {
        self.scheduler.timebase.samples_per_measure()
    }

    pub fn snapshot(&self) -> StateDocument {
        self.state.snapshot()
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn events(&self) -> &[ScheduleEvent] {
        &self.events
    }

    fn record(&mut self, wall_ms: u64, body: LogBody) {
        let entry = LogEntry {
            wall_ms,
            sample: self.state.current_sample(),
            body,
        };
        if let Err(e) = self.log.append(entry) {
            tracing::error!("session log write failed: {e}");
        }
    }

    /// Moves the clock forward; returns feed messages for every boundary
    /// crossed (its events, then a tick).
    pub fn advance_to(&mut self, sample: u64, wall_ms: u64) -> Vec<StreamMessage> {
        let spm = self.samples_per_measure();
        let first = self.state.current_sample().div_ceil(spm);
        let events = self.state.advance_to(sample);
        let last = self.state.current_sample().div_ceil(spm);
        let mut out = Vec::new();
        let mut pending = events.into_iter().peekable();
        for m in first..last {
            while let Some(ev) = pending.next_if(|e| e.measure == m) {
                self.record(wall_ms, LogBody::Event(ev.clone()));
                self.events.push(ev.clone());
                out.push(StreamMessage::Schedule(ev));
            }
            out.push(StreamMessage::Tick {
                measure: m,
                at_sample: m * spm,
            });
        }
        if last > first {
            self.record(wall_ms, LogBody::Clock {});
        }
        out
    }

    /// Launch request at the current clock.
    pub fn launch(&mut self, station: u8, wall_ms: u64) -> LaunchDocument {
        self.record(wall_ms, LogBody::Request { station });
        let now = self.state.current_sample();
        match self.state.request_launch(station, now) {
            Ok(a) => LaunchDocument {
                accepted: true,
                station,
                slot: Some(a.slot),
                loop_id: Some(a.loop_id),
                bell_note: Some(a.bell_note.name()),
                request_sample: Some(a.request_sample),
                announce_measure: Some(a.announce_measure),
                start_measure: Some(a.start_measure),
                end_measure: Some(a.end_measure),
                reason: None,
                message: None,
            },
            Err(e) => {
                let reason = serde_json::to_value(&e)
                    .ok()
                    .and_then(|v| v.get("reason").and_then(|r| r.as_str()).map(String::from))
                    .unwrap_or_else(|| "Rejected".into());
                LaunchDocument {
                    accepted: false,
                    station,
                    slot: None,
                    loop_id: None,
                    bell_note: None,
                    request_sample: Some(now),
                    announce_measure: None,
                    start_measure: None,
                    end_measure: None,
                    reason: Some(reason),
                    message: Some(e.to_string()),
                }
            }
        }
    }

    /// Boundaries processed so far; measures below this can be rendered.
    pub fn measures_available(&self) -> u64 {
        self.state.current_sample().div_ceil(self.samples_per_measure())
    }

    /// Stereo mix of one measure.
    pub fn audio_chunk(&self, measure: u64) -> Result<MixOutput, AudioError> {
        let available = self.measures_available();
        if measure >= available {
            return Err(AudioError::NotYet {
                requested: measure,
                current: available.saturating_sub(1),
            });
        }
        let tb = &self.scheduler.timebase;
        let spm = tb.samples_per_measure();
        let upto = self.events.partition_point(|e| e.measure <= measure);
        let plan = plan_session(&self.events[..upto], &self.assets.library, measure + 1, tb)
            .map_err(|e| AudioError::Render(e.to_string()))?;
        Ok(plan.render_frames(&self.assets.bank, measure * spm, spm))
    }
}

type Reply<T> = oneshot::Sender<T>;

enum Command {
    Launch(u8, Reply<LaunchDocument>),
    Advance(u64, Reply<StateDocument>),
    Subscribe(Reply<(StateDocument, broadcast::Receiver<StreamMessage>)>),
    Audio(Option<u64>, Reply<(u64, Result<MixOutput, AudioError>)>),
    Log(Reply<String>),
}

/// Cloneable front end of the session task.
#[derive(Clone)]
pub struct SessionHandle {
    commands: mpsc::Sender<Command>,
    snapshots: watch::Receiver<Arc<StateDocument>>,
    config: Arc<SessionConfig>,
    assets: Arc<Assets>,
}

impl SessionHandle {
    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, SessionError> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(make(tx)).await.map_err(|_| SessionError::Stopped)?;
        rx.await.map_err(|_| SessionError::Stopped)
    }

    pub async fn launch(&self, station: u8) -> Result<LaunchDocument, SessionError> {
        self.call(|r| Command::Launch(station, r)).await
    }

    /// Manual clock: moves forward by `measures` boundaries' worth of samples.
    pub async fn advance_measures(&self, measures: u64) -> Result<StateDocument, SessionError> {
        let now = self.state().current_sample;
        let spm = self.state().samples_per_measure;
        self.call(|r| Command::Advance(now + measures * spm, r)).await
    }

    pub async fn advance_to(&self, sample: u64) -> Result<StateDocument, SessionError> {
        self.call(|r| Command::Advance(sample, r)).await
    }

    /// Snapshot plus a receiver positioned exactly after it.
    pub async fn subscribe(&self) -> Result<(StateDocument, broadcast::Receiver<StreamMessage>), SessionError> {
        self.call(Command::Subscribe).await
    }

    /// Latest published snapshot; does not queue behind commands.
    pub fn state(&self) -> Arc<StateDocument> {
        self.snapshots.borrow().clone()
    }

    /// `None` picks the measure currently playing.
    pub async fn audio(&self, measure: Option<u64>) -> Result<(u64, Result<MixOutput, AudioError>), SessionError> {
        self.call(|r| Command::Audio(measure, r)).await
    }

    pub async fn log_jsonl(&self) -> Result<String, SessionError> {
        self.call(Command::Log).await
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn assets(&self) -> &Arc<Assets> {
        &self.assets
    }
}

/// Realtime tick period.
const TICK: Duration = Duration::from_millis(5);
const FEED_CAPACITY: usize = 4096;

/// Wall clock mapped onto session samples.
struct Clock {
    origin: Instant,
    base_sample: u64,
    base_wall_ms: u64,
    rate: f64,
}

impl Clock {
    fn wall_ms(&self) -> u64 {
        self.base_wall_ms + self.origin.elapsed().as_millis() as u64
    }

    fn sample(&self) -> u64 {
        self.base_sample + (self.origin.elapsed().as_secs_f64() * self.rate) as u64
    }
}

/// Moves `session` onto its own task. Must be called inside a tokio runtime.
pub fn spawn(session: Session) -> SessionHandle {
    let (cmd_tx, mut cmd_rx) = mpsc::channel::<Command>(256);
    let (feed, _) = broadcast::channel::<StreamMessage>(FEED_CAPACITY);
    let (snap_tx, snap_rx) = watch::channel(Arc::new(session.snapshot()));
    let config = Arc::new(session.config().clone());
    let assets = session.assets().clone();
    let realtime = config.realtime;
    let clock = Clock {
        origin: Instant::now(),
        base_sample: session.current_sample(),
        base_wall_ms: session.log().last_wall_ms(),
        rate: f64::from(config.sample_rate_hz) * config.speed,
    };

    tokio::spawn(async move {
        let mut session = session;
        let mut ticker = tokio::time::interval(TICK);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        let publish = |session: &Session, msgs: Vec<StreamMessage>| {
            let moved = !msgs.is_empty();
            for m in msgs {
                let _ = feed.send(m);
            }
            if moved {
                snap_tx.send_replace(Arc::new(session.snapshot()));
            }
        };
        loop {
            let cmd = tokio::select! {
                biased;
                c = cmd_rx.recv() => match c {
                    Some(c) => Some(c),
                    None => break,
                },
                _ = ticker.tick(), if realtime => None,
            };
            if realtime {
                let msgs = session.advance_to(clock.sample(), clock.wall_ms());
                publish(&session, msgs);
            }
            let Some(cmd) = cmd else { continue };
            match cmd {
                Command::Launch(station, reply) => {
                    let doc = session.launch(station, clock.wall_ms());
                    snap_tx.send_replace(Arc::new(session.snapshot()));
                    let _ = reply.send(doc);
                }
                Command::Advance(target, reply) => {
                    if !realtime {
                        let msgs = session.advance_to(target, clock.wall_ms());
                        publish(&session, msgs);
                    }
                    let _ = reply.send(session.snapshot());
                }
                Command::Subscribe(reply) => {
                    let _ = reply.send((session.snapshot(), feed.subscribe()));
                }
                Command::Audio(measure, reply) => {
                    let m = measure.unwrap_or_else(|| session.measures_available().saturating_sub(1));
                    let _ = reply.send((m, session.audio_chunk(m)));
                }
                Command::Log(reply) => {
                    let _ = reply.send(session.log().to_jsonl());
                }
            }
        }
    });

    SessionHandle {
        commands: cmd_tx,
        snapshots: snap_rx,
        config,
        assets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use interlock_core::scheduler::EventKind;
    use std::sync::OnceLock;

    const SPM: u64 = 84_000;

    fn assets() -> Arc<Assets> {
        static A: OnceLock<Arc<Assets>> = OnceLock::new();
        A.get_or_init(|| Arc::new(Assets::for_config(&SessionConfig::default(), Exec::default()).unwrap()))
            .clone()
    }

    fn manual() -> SessionConfig {
        SessionConfig {
            realtime: false,
            ..SessionConfig::default()
        }
    }

    fn session() -> Session {
        Session::new(manual(), assets(), SessionLog::in_memory()).unwrap()
    }

    #[test]
    fn first_launch_rings_g3() {
        let mut s = session();
        let doc = s.launch(1, 0);
        assert!(doc.accepted);
        assert_eq!(doc.bell_note.as_deref(), Some("G3"));
        assert_eq!(doc.loop_id.as_deref(), Some("C01"));
        assert_eq!(doc.announce_measure, Some(1));
        let json = serde_json::to_value(&doc).unwrap();
        assert_eq!(json["accepted"], true);
        assert!(json.get("reason").is_none());
    }

    #[test]
    fn capacity_rejections_are_documents() {
        let mut s = session();
        assert!(s.launch(2, 0).accepted);
        assert!(s.launch(2, 0).accepted);
        let third = s.launch(2, 0);
        assert!(!third.accepted);
        assert_eq!(third.reason.as_deref(), Some("StationFull"));
        for st in [1, 1, 3, 3, 4, 4, 5, 5, 6, 6] {
            assert!(s.launch(st, 0).accepted);
        }
        let before = s.snapshot().to_json();
        let full = s.launch(1, 0);
        assert_eq!(full.reason.as_deref(), Some("WallFull"));
        assert_eq!(s.snapshot().to_json(), before);
        assert_eq!(s.launch(9, 0).reason.as_deref(), Some("InvalidStation"));
    }

    #[test]
    fn feed_orders_events_then_ticks() {
        let mut s = session();
        s.launch(1, 0);
        let msgs = s.advance_to(3 * SPM, 0);
        let names: Vec<String> = msgs
            .iter()
            .map(|m| match m {
                StreamMessage::Schedule(e) => format!("{:?}", e.kind),
                StreamMessage::Tick { measure, .. } => format!("tick{measure}"),
                StreamMessage::Snapshot(_) => "snapshot".into(),
            })
            .collect();
        assert_eq!(
            names,
            ["tick0", "BedFadeOut", "BellStrike", "TollStart", "tick1", "CollageStart", "tick2"]
        );
        assert!(s.advance_to(3 * SPM, 0).is_empty());
    }

    #[test]
    fn state_after_launch_and_two_measures() {
        let mut s = session();
        let fresh = s.snapshot();
        assert_eq!(fresh.bed_active, vec![1, 2, 3, 4, 5, 6]);
        assert!(fresh.collages.is_empty());
        s.launch(4, 0);
        s.advance_to(2 * SPM, 0);
        let doc = s.snapshot();
        assert_eq!(doc.collages.len(), 1);
        assert_eq!(doc.bed_active, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn log_replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.jsonl");
        let mut s = Session::new(manual(), assets(), SessionLog::open(&path).unwrap()).unwrap();
        s.launch(1, 5);
        s.advance_to(SPM + 10, 6);
        s.launch(1, 7);
        s.launch(1, 8);
        s.advance_to(7 * SPM + 3, 9);
        s.launch(6, 10);
        let doc = s.snapshot();
        let events = s.events().to_vec();
        drop(s);

        let resumed = Session::new(manual(), assets(), SessionLog::open(&path).unwrap()).unwrap();
        assert_eq!(resumed.snapshot(), doc);
        assert_eq!(resumed.events(), &events[..]);

        // A torn final line is ignored.
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"wall_ms\":11,\"sam");
        std::fs::write(&path, &text).unwrap();
        let resumed = Session::new(manual(), assets(), SessionLog::open(&path).unwrap()).unwrap();
        assert_eq!(resumed.snapshot(), doc);
    }

    #[test]
    fn tampered_log_is_refused() {
        let mut s = session();
        s.launch(1, 0);
        s.advance_to(3 * SPM, 0);
        let mut entries = s.log().entries().to_vec();
        for e in &mut entries {
            if let LogBody::Event(ev) = &mut e.body {
                if ev.kind == EventKind::BedFadeOut {
                    ev.bed = Some(5);
                }
            }
        }
        let mut log = SessionLog::in_memory();
        for e in entries {
            log.append(e).unwrap();
        }
        assert!(matches!(
            Session::new(manual(), assets(), log),
            Err(SessionError::Log(LogError::Diverged(_)))
        ));
    }

    #[test]
    fn audio_chunks_follow_the_clock() {
        let mut s = session();
        assert!(matches!(s.audio_chunk(0), Err(AudioError::NotYet { .. })));
        s.launch(3, 0);
        s.advance_to(3 * SPM, 0);
        assert_eq!(s.measures_available(), 3);
        let chunk = s.audio_chunk(2).unwrap();
        assert_eq!(chunk.pcm.frames(), SPM as usize);
        assert_eq!(chunk.clipped_samples, 0);
        assert!(matches!(s.audio_chunk(3), Err(AudioError::NotYet { .. })));
        assert_eq!(s.audio_chunk(0).unwrap().pcm.frames(), SPM as usize);
    }

    #[test]
    fn loop_wavs_cover_the_library() {
        let a = assets();
        for id in ["BED01", "BED06", "C01", "C12", "ANN01", "ANN12"] {
            let wav = a.loop_wav(id).unwrap();
            assert_eq!(&wav[0..4], b"RIFF");
        }
        assert!(a.loop_wav("C13").is_none());
    }
}
