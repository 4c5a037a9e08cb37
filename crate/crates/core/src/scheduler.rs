//! Live layering state machine.
//!
//! Launch requests are quantized to measure boundaries: the bell and tolls
//! sound at the first boundary strictly after the request, the collage loop
//! enters one measure later and plays for `lifetime_measures`. At every
//! boundary the bed stack is recomputed from the number of sounding
//! collages `n` as `{1..6-min(n,6)}`, so beds leave from the top (BED06
//! first) and return from the bottom (BED01 first).
//!
//! The state has a single owner. Nothing here is shared or locked; callers
//! that need concurrency serialize commands into one task.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loopgen::{
    collage_id, collage_index_for, station_bell, BED_COUNT, COLLAGE_COUNT, SLOTS_PER_STATION,
    STATION_COUNT,
};
use crate::music::{Pitch, TimebaseConfig};

pub const DEFAULT_LIFETIME_MEASURES: u32 = 48;
pub const DEFAULT_BED_FADE_MEASURES: u32 = 2;
pub const DEFAULT_COLLAGE_FADE_MEASURES: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub timebase: TimebaseConfig,
    pub lifetime_measures: u32,
    pub bed_fade_measures: u32,
    pub collage_fade_measures: u32,
}

impl SchedulerConfig {
    pub fn new(timebase: TimebaseConfig) -> Self {
        Self {
            timebase,
            lifetime_measures: DEFAULT_LIFETIME_MEASURES,
            bed_fade_measures: DEFAULT_BED_FADE_MEASURES,
            collage_fade_measures: DEFAULT_COLLAGE_FADE_MEASURES,
        }
    }

    pub fn with_lifetime(mut self, measures: u32) -> Self {
        self.lifetime_measures = measures;
        self
    }

    fn validate(&self) -> Result<(), SchedulerError> {
        if self.lifetime_measures == 0 {
            return Err(SchedulerError::InvalidConfig("lifetime_measures must be >= 1".into()));
        }
        if self.bed_fade_measures == 0 || self.collage_fade_measures == 0 {
            return Err(SchedulerError::InvalidConfig("fade lengths must be >= 1 measure".into()));
        }
        Ok(())
    }
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self::new(TimebaseConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "reason")]
pub enum SchedulerError {
    #[error("StationFull: station {station} already has two live collages")]
    StationFull { station: u8 },
    #[error("WallFull: twelve collages are already live")]
    WallFull,
    #[error("InvalidStation: {station} is not in 1..=6")]
    InvalidStation { station: u8 },
    #[error("ClockRewind: request at sample {requested} precedes the clock at {current}")]
    ClockRewind { requested: u64, current: u64 },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("InvalidSnapshot: {0}")]
    InvalidSnapshot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollageInstance {
    pub seq: u64,
    pub station: u8,
    pub slot: u8,
    pub loop_id: String,
    pub request_sample: u64,
    pub announce_measure: u64,
    pub start_measure: u64,
    pub end_measure: u64,
}

impl CollageInstance {
    /// Holds its slot at `sample` (from acceptance until its end boundary).
    fn holds_slot_at(&self, sample: u64, samples_per_measure: u64) -> bool {
        self.end_measure * samples_per_measure > sample
    }

    /// Counts against the bed stack at boundary `measure`.
    pub fn is_sounding_at(&self, measure: u64) -> bool {
        self.announce_measure <= measure && measure < self.end_measure
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    CollageEnd,
    BedFadeOut,
    BedFadeIn,
    BellStrike,
    TollStart,
    CollageStart,
}

/// A measure-aligned command for the renderer and the wall display.
///
/// Serialized as one JSON object per line:
/// `{at_sample, measure, kind, station?, loop_id?, bed?, fade_measures?}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub at_sample: u64,
    pub measure: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bed: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fade_measures: Option<u32>,
}

impl ScheduleEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

pub fn write_event_log(events: &[ScheduleEvent]) -> String {
    events.iter().map(|e| e.to_json_line() + "\n").collect()
}

pub fn parse_event_log(text: &str) -> Result<Vec<ScheduleEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchAccepted {
    pub station: u8,
    pub slot: u8,
    pub loop_id: String,
    pub bell_note: Pitch,
    pub request_sample: u64,
    pub announce_measure: u64,
    pub start_measure: u64,
    pub end_measure: u64,
    /// Bed this launch pushes out at its announce boundary, given what is
    /// known at request time.
    pub displaced_bed: Option<u8>,
}

impl LaunchAccepted {
    pub fn bell_latency_samples(&self, samples_per_measure: u64) -> u64 {
        self.announce_measure * samples_per_measure - self.request_sample
    }
}

pub type LaunchOutcome = Result<LaunchAccepted, SchedulerError>;

/// Beds active for `n` sounding collages: `{1..6-min(n,6)}`.
pub fn bed_set_for(n: usize) -> BTreeSet<u8> {
    let top = BED_COUNT - n.min(usize::from(BED_COUNT)) as u8;
    (1..=top).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoundtrackState {
    config: SchedulerConfig,
    current_sample: u64,
    /// Accepted, not yet expired instances (pending ones included), in
    /// acceptance order.
    collages: Vec<CollageInstance>,
    /// Beds up: the active set is `{1..=beds_up}`.
    beds_up: u8,
    next_seq: u64,
}

pub fn new_state(config: SchedulerConfig) -> Result<SoundtrackState, SchedulerError> {
    config.validate()?;
    Ok(SoundtrackState {
        config,
        current_sample: 0,
        collages: Vec::new(),
        beds_up: BED_COUNT,
        next_seq: 0,
    })
}

impl SoundtrackState {
    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn current_sample(&self) -> u64 {
        self.current_sample
    }

    fn spm(&self) -> u64 {
        self.config.timebase.samples_per_measure()
    }

    pub fn current_measure(&self) -> u64 {
        self.current_sample / self.spm()
    }

    pub fn collages(&self) -> &[CollageInstance] {
        &self.collages
    }

    pub fn active_beds(&self) -> BTreeSet<u8> {
        (1..=self.beds_up).collect()
    }

    fn occupying(&self, sample: u64) -> impl Iterator<Item = &CollageInstance> {
        let spm = self.spm();
        self.collages
            .iter()
            .filter(move |c| c.holds_slot_at(sample, spm))
    }

    /// Queues a launch for `station` requested at `now_sample`.
    pub fn request_launch(&mut self, station: u8, now_sample: u64) -> LaunchOutcome {
        if !(1..=STATION_COUNT).contains(&station) {
            return Err(SchedulerError::InvalidStation { station });
        }
        if now_sample < self.current_sample {
            return Err(SchedulerError::ClockRewind {
                requested: now_sample,
                current: self.current_sample,
            });
        }
        if self.occupying(now_sample).count() >= usize::from(COLLAGE_COUNT) {
            return Err(SchedulerError::WallFull);
        }
        let taken: BTreeSet<u8> = self
            .occupying(now_sample)
            .filter(|c| c.station == station)
            .map(|c| c.slot)
            .collect();
        let slot = (1..=SLOTS_PER_STATION)
            .find(|s| !taken.contains(s))
            .ok_or(SchedulerError::StationFull { station })?;

        let spm = self.spm();
        let announce_measure = now_sample / spm + 1;
        let start_measure = announce_measure + 1;
        let end_measure = start_measure + u64::from(self.config.lifetime_measures);
        let others = self
            .collages
            .iter()
            .filter(|c| c.is_sounding_at(announce_measure))
            .count();
        let displaced_bed = (others < usize::from(BED_COUNT)).then(|| BED_COUNT - others as u8);

        let instance = CollageInstance {
            seq: self.next_seq,
            station,
            slot,
            loop_id: collage_id(collage_index_for(station, slot)),
            request_sample: now_sample,
            announce_measure,
            start_measure,
            end_measure,
        };
        self.next_seq += 1;
        let accepted = LaunchAccepted {
            station,
            slot,
            loop_id: instance.loop_id.clone(),
            bell_note: station_bell(station),
            request_sample: now_sample,
            announce_measure,
            start_measure,
            end_measure,
            displaced_bed,
        };
        self.collages.push(instance);
        Ok(accepted)
    }

    /// Moves the clock to `target_sample`, returning every event in
    /// `[current, target)` in sample order. A target behind the clock is a
    /// no-op.
    pub fn advance_to(&mut self, target_sample: u64) -> Vec<ScheduleEvent> {
        let mut events = Vec::new();
        if target_sample <= self.current_sample {
            return events;
        }
        let spm = self.spm();
        let mut boundary = self.current_sample.div_ceil(spm);
        while boundary * spm < target_sample {
            self.process_boundary(boundary, &mut events);
            boundary += 1;
        }
        self.current_sample = target_sample;
        events
    }

    fn process_boundary(&mut self, measure: u64, events: &mut Vec<ScheduleEvent>) {
        let at_sample = measure * self.spm();
        let event = |kind| ScheduleEvent {
            at_sample,
            measure,
            kind,
            station: None,
            loop_id: None,
            bed: None,
            fade_measures: None,
        };

        let (ended, live): (Vec<_>, Vec<_>) = std::mem::take(&mut self.collages)
            .into_iter()
            .partition(|c| c.end_measure <= measure);
        self.collages = live;
        for c in ended {
            events.push(ScheduleEvent {
                station: Some(c.station),
                loop_id: Some(c.loop_id),
                fade_measures: Some(self.config.collage_fade_measures),
                ..event(EventKind::CollageEnd)
            });
        }

        let sounding = self.collages.iter().filter(|c| c.is_sounding_at(measure)).count();
        let target = BED_COUNT - sounding.min(usize::from(BED_COUNT)) as u8;
        while self.beds_up > target {
            events.push(ScheduleEvent {
                bed: Some(self.beds_up),
                fade_measures: Some(self.config.bed_fade_measures),
                ..event(EventKind::BedFadeOut)
            });
            self.beds_up -= 1;
        }
        while self.beds_up < target {
            self.beds_up += 1;
            events.push(ScheduleEvent {
                bed: Some(self.beds_up),
                fade_measures: Some(self.config.bed_fade_measures),
                ..event(EventKind::BedFadeIn)
            });
        }

        for (kind, pick) in [
            (EventKind::BellStrike, true),
            (EventKind::TollStart, true),
            (EventKind::CollageStart, false),
        ] {
            for c in &self.collages {
                let at = if pick { c.announce_measure } else { c.start_measure };
                if at == measure {
                    events.push(ScheduleEvent {
                        station: Some(c.station),
                        loop_id: Some(c.loop_id.clone()),
                        ..event(kind)
                    });
                }
            }
        }
    }

    pub fn snapshot(&self) -> StateDocument {
        let measure = self.current_measure();
        StateDocument {
            config: self.config,
            current_sample: self.current_sample,
            measure,
            samples_per_measure: self.spm(),
            bed_active: self.active_beds().into_iter().collect(),
            collages: self
                .collages
                .iter()
                .map(|c| CollageView {
                    remaining_measures: c.end_measure.saturating_sub(measure),
                    phase: if measure < c.announce_measure {
                        CollagePhase::Pending
                    } else if measure < c.start_measure {
                        CollagePhase::Announcing
                    } else {
                        CollagePhase::Playing
                    },
                    bell_note: station_bell(c.station).name(),
                    instance: c.clone(),
                })
                .collect(),
            next_seq: self.next_seq,
        }
    }

    pub fn restore(doc: &StateDocument) -> Result<Self, SchedulerError> {
        doc.config.validate()?;
        let bad = |m: &str| Err(SchedulerError::InvalidSnapshot(m.to_string()));
        if doc.samples_per_measure != doc.config.timebase.samples_per_measure() {
            return bad("samples_per_measure does not match the timebase");
        }
        if doc.measure != doc.current_sample / doc.samples_per_measure {
            return bad("measure does not match current_sample");
        }
        let beds_up = doc.bed_active.len() as u8;
        if doc.bed_active != (1..=beds_up).collect::<Vec<_>>() || beds_up > BED_COUNT {
            return bad("bed_active must be a prefix of 1..=6");
        }
        Ok(Self {
            config: doc.config,
            current_sample: doc.current_sample,
            collages: doc.collages.iter().map(|v| v.instance.clone()).collect(),
            beds_up,
            next_seq: doc.next_seq,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollagePhase {
    Pending,
    Announcing,
    Playing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollageView {
    #[serde(flatten)]
    pub instance: CollageInstance,
    pub phase: CollagePhase,
    pub remaining_measures: u64,
    pub bell_note: String,
}

/// Complete serializable view of a [`SoundtrackState`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDocument {
    pub config: SchedulerConfig,
    pub current_sample: u64,
    pub measure: u64,
    pub samples_per_measure: u64,
    pub bed_active: Vec<u8>,
    pub collages: Vec<CollageView>,
    pub next_seq: u64,
}

impl StateDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }
}

/// Replays `(station, sample)` requests into a fresh state up to
/// `end_sample`. Requests at or after `end_sample` are ignored and get no
/// outcome.
pub fn replay(
    config: SchedulerConfig,
    requests: &[(u8, u64)],
    end_sample: u64,
) -> Result<(SoundtrackState, Vec<ScheduleEvent>, Vec<LaunchOutcome>), SchedulerError> {
    let mut state = new_state(config)?;
    let mut events = Vec::new();
    let mut outcomes = Vec::with_capacity(requests.len());
    for &(station, at) in requests.iter().filter(|r| r.1 < end_sample) {
        events.extend(state.advance_to(at));
        outcomes.push(state.request_launch(station, at));
    }
    events.extend(state.advance_to(end_sample));
    Ok((state, events, outcomes))
}
