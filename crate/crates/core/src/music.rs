//! Timebase, pitch, scale and pattern primitives.
//!
//! Everything in the crate shares one integer grid: a measure is an exact
//! number of samples and is split into an exact number of pulses. The
//! constructors refuse any configuration that would put a measure boundary
//! between two samples or make a measure last two seconds or more.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Upper bound on a measure's duration; a launch waits at most one measure.
pub const MAX_MEASURE_SECONDS: f64 = 2.0;

pub const ACCENT_VELOCITY: f64 = 1.0;
pub const SOFT_VELOCITY: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MusicError {
    #[error("NonIntegerGrid: a measure is {numerator}/{denominator} samples, not a whole number")]
    NonIntegerGrid { numerator: u64, denominator: u64 },
    #[error("MeasureTooLong: a measure lasts {seconds:.4} s (limit {MAX_MEASURE_SECONDS} s)")]
    MeasureTooLong { seconds: f64 },
    #[error("PulseGridMismatch: {pulses} pulses do not divide {samples} samples per measure")]
    PulseGridMismatch { pulses: u64, samples: u64 },
    #[error("invalid timebase: {0}")]
    InvalidConfig(String),
    #[error("invalid tempo {0:?}")]
    InvalidTempo(String),
    #[error("note number {0} is outside 0..=127")]
    PitchOutOfRange(i64),
    #[error("cannot parse note name {0:?}")]
    BadNoteName(String),
    #[error("scale root is not a member")]
    RootNotInScale,
    #[error("scale has no members")]
    EmptyScale,
    #[error("UnsupportedMeter: {0}")]
    UnsupportedMeter(String),
    #[error("NoPitchedEvents: pattern contains only unpitched events")]
    NoPitchedEvents,
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
}

/// Tempo in beats per minute as a reduced fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tempo {
    num: u64,
    den: u64,
}

impl Tempo {
    pub fn new(num: u64, den: u64) -> Result<Self, MusicError> {
        if num == 0 || den == 0 {
            return Err(MusicError::InvalidTempo(format!("{num}/{den}")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn bpm(bpm: u64) -> Result<Self, MusicError> {
        Self::new(bpm, 1)
    }

    pub fn numerator(&self) -> u64 {
        self.num
    }

    pub fn denominator(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Tempo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Tempo {
    type Err = MusicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MusicError::InvalidTempo(s.to_string());
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => Tempo::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            ),
            None => Tempo::bpm(s.parse().map_err(|_| bad())?),
        }
    }
}

impl Serialize for Tempo {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.den == 1 {
            serializer.serialize_u64(self.num)
        } else {
            serializer.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Tempo {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        let parsed = match Raw::deserialize(deserializer)? {
            Raw::Int(n) => Tempo::bpm(n),
            Raw::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Tempo, meter, pulse grid and sample rate.
///
/// Only constructible through [`TimebaseConfig::new`] (or deserialization,
/// which runs the same checks), so a value in hand always has an exact
/// integer sample grid and a sub-two-second measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTimebase", into = "RawTimebase")]
pub struct TimebaseConfig {
    tempo_bpm: Tempo,
    beats_per_measure: u32,
    pulses_per_beat: u32,
    sample_rate_hz: u32,
    samples_per_measure: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTimebase {
    tempo_bpm: Tempo,
    beats_per_measure: u32,
    pulses_per_beat: u32,
    sample_rate_hz: u32,
}

impl TryFrom<RawTimebase> for TimebaseConfig {
    type Error = MusicError;

    fn try_from(raw: RawTimebase) -> Result<Self, Self::Error> {
        TimebaseConfig::new(
            raw.tempo_bpm,
            raw.beats_per_measure,
            raw.pulses_per_beat,
            raw.sample_rate_hz,
        )
    }
}

impl From<TimebaseConfig> for RawTimebase {
    fn from(cfg: TimebaseConfig) -> Self {
        RawTimebase {
            tempo_bpm: cfg.tempo_bpm,
            beats_per_measure: cfg.beats_per_measure,
            pulses_per_beat: cfg.pulses_per_beat,
            sample_rate_hz: cfg.sample_rate_hz,
        }
    }
}

impl Default for TimebaseConfig {
    /// 44.1 kHz, 4/4 at 126 BPM, sixteenth-note pulses: 84000 samples and
    /// 16 pulses per measure.
    fn default() -> Self {
        TimebaseConfig::new(Tempo { num: 126, den: 1 }, 4, 4, 44_100)
            .expect("default timebase is valid")
    }
}

impl TimebaseConfig {
    pub fn new(
        tempo_bpm: Tempo,
        beats_per_measure: u32,
        pulses_per_beat: u32,
        sample_rate_hz: u32,
    ) -> Result<Self, MusicError> {
        if beats_per_measure == 0 || pulses_per_beat == 0 || sample_rate_hz == 0 {
            return Err(MusicError::InvalidConfig(
                "beats_per_measure, pulses_per_beat and sample_rate_hz must be positive".into(),
            ));
        }
        let samples_per_measure = exact_measure_samples(
            tempo_bpm,
            u64::from(beats_per_measure),
            u64::from(sample_rate_hz),
        )?;
        let pulses = u64::from(beats_per_measure) * u64::from(pulses_per_beat);
        if samples_per_measure % pulses != 0 {
            return Err(MusicError::PulseGridMismatch {
                pulses,
                samples: samples_per_measure,
            });
        }
        Ok(Self {
            tempo_bpm,
            beats_per_measure,
            pulses_per_beat,
            sample_rate_hz,
            samples_per_measure,
        })
    }

    /// Shorthand for an integer tempo.
    pub fn with_bpm(
        bpm: u64,
        beats_per_measure: u32,
        pulses_per_beat: u32,
        sample_rate_hz: u32,
    ) -> Result<Self, MusicError> {
        Self::new(Tempo::bpm(bpm)?, beats_per_measure, pulses_per_beat, sample_rate_hz)
    }

    pub fn tempo_bpm(&self) -> Tempo {
        self.tempo_bpm
    }

    pub fn beats_per_measure(&self) -> u32 {
        self.beats_per_measure
    }

    pub fn pulses_per_beat(&self) -> u32 {
        self.pulses_per_beat
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn samples_per_measure(&self) -> u64 {
        self.samples_per_measure
    }

    pub fn pulses_per_measure(&self) -> u32 {
        self.beats_per_measure * self.pulses_per_beat
    }

    pub fn samples_per_pulse(&self) -> u64 {
        self.samples_per_measure / u64::from(self.pulses_per_measure())
    }

    pub fn measure_seconds(&self) -> f64 {
        self.samples_per_measure as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn measure_of_sample(&self, sample: u64) -> u64 {
        sample / self.samples_per_measure
    }
}

fn exact_measure_samples(tempo: Tempo, beats: u64, sample_rate: u64) -> Result<u64, MusicError> {
    let samples = grid_samples(tempo, beats, sample_rate)?;
    if samples as f64 >= MAX_MEASURE_SECONDS * sample_rate as f64 {
        return Err(MusicError::MeasureTooLong {
            seconds: samples as f64 / sample_rate as f64,
        });
    }
    Ok(samples)
}

/// `sample_rate * 60 * beats / tempo` when that is a whole number. No
/// duration limit is applied here.
pub fn grid_samples(tempo: Tempo, beats: u64, sample_rate: u64) -> Result<u64, MusicError> {
    let numerator = sample_rate * 60 * beats * tempo.den;
    let denominator = tempo.num;
    if !numerator.is_multiple_of(denominator) {
        return Err(MusicError::NonIntegerGrid {
            numerator,
            denominator,
        });
    }
    Ok(numerator / denominator)
}

/// Exact number of samples in one measure.
pub fn measure_samples(config: &TimebaseConfig) -> u64 {
    config.samples_per_measure
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PitchClass(u8);

impl PitchClass {
    pub const C: PitchClass = PitchClass(0);
    pub const D: PitchClass = PitchClass(2);
    pub const E: PitchClass = PitchClass(4);
    pub const F: PitchClass = PitchClass(5);
    pub const F_SHARP: PitchClass = PitchClass(6);
    pub const G: PitchClass = PitchClass(7);
    pub const A: PitchClass = PitchClass(9);
    pub const B: PitchClass = PitchClass(11);

    pub fn new(value: u8) -> Self {
        PitchClass(value % 12)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        NOTE_NAMES[self.0 as usize]
    }
}

impl Serialize for PitchClass {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for PitchClass {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(deserializer)?;
        if v >= 12 {
            return Err(serde::de::Error::custom(format!("pitch class {v} out of range")));
        }
        Ok(PitchClass(v))
    }
}

const NOTE_NAMES: [&str; 12] = [
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
];

/// Note number on the standard 0-127 scale (A4 = 69, middle C = 60).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Pitch(u8);

impl Pitch {
    pub fn new(note_number: i64) -> Result<Self, MusicError> {
        if (0..=127).contains(&note_number) {
            Ok(Pitch(note_number as u8))
        } else {
            Err(MusicError::PitchOutOfRange(note_number))
        }
    }

    pub fn note_number(self) -> u8 {
        self.0
    }

    pub fn pitch_class(self) -> PitchClass {
        PitchClass(self.0 % 12)
    }

    pub fn octave(self) -> i32 {
        i32::from(self.0) / 12 - 1
    }

    /// Equal-tempered frequency, A4 = 440 Hz.
    pub fn frequency_hz(self) -> f64 {
        440.0 * 2f64.powf((f64::from(self.0) - 69.0) / 12.0)
    }

    pub fn name(self) -> String {
        format!("{}{}", self.pitch_class().name(), self.octave())
    }

    /// Parses names such as `G3`, `F#4`, `Bb2`.
    pub fn from_name(name: &str) -> Result<Self, MusicError> {
        let bad = || MusicError::BadNoteName(name.to_string());
        let mut chars = name.chars();
        let letter = chars.next().ok_or_else(bad)?;
        let base: i64 = match letter.to_ascii_uppercase() {
            'C' => 0,
            'D' => 2,
            'E' => 4,
            'F' => 5,
            'G' => 7,
            'A' => 9,
            'B' => 11,
            _ => return Err(bad()),
        };
        let rest = chars.as_str();
        let (accidental, octave) = if let Some(r) = rest.strip_prefix('#') {
            (1, r)
        } else if let Some(r) = rest.strip_prefix('b') {
            (-1, r)
        } else {
            (0, rest)
        };
        let octave: i64 = octave.parse().map_err(|_| bad())?;
        Pitch::new((octave + 1) * 12 + base + accidental).map_err(|_| bad())
    }
}

impl<'de> Deserialize<'de> for Pitch {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(deserializer)?;
        Pitch::new(v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawScale")]
pub struct Scale {
    root: PitchClass,
    members: BTreeSet<PitchClass>,
}

#[derive(Deserialize)]
struct RawScale {
    root: PitchClass,
    members: BTreeSet<PitchClass>,
}

impl TryFrom<RawScale> for Scale {
    type Error = MusicError;

    fn try_from(raw: RawScale) -> Result<Self, Self::Error> {
        Scale::new(raw.root, raw.members)
    }
}

impl Scale {
    pub fn new(
        root: PitchClass,
        members: impl IntoIterator<Item = PitchClass>,
    ) -> Result<Self, MusicError> {
        let members: BTreeSet<_> = members.into_iter().collect();
        if members.is_empty() {
            return Err(MusicError::EmptyScale);
        }
        if !members.contains(&root) {
            return Err(MusicError::RootNotInScale);
        }
        Ok(Self { root, members })
    }

    /// G A B C D E F with the raised seventh F# also admitted.
    pub fn g_dominant() -> Self {
        use PitchClass as P;
        Self::new(P::G, [P::G, P::A, P::B, P::C, P::D, P::E, P::F, P::F_SHARP])
            .expect("static scale")
    }

    /// G A B D E.
    pub fn g_pentatonic() -> Self {
        use PitchClass as P;
        Self::new(P::G, [P::G, P::A, P::B, P::D, P::E]).expect("static scale")
    }

    pub fn root(&self) -> PitchClass {
        self.root
    }

    pub fn members(&self) -> impl Iterator<Item = PitchClass> + '_ {
        self.members.iter().copied()
    }

    pub fn contains_class(&self, pc: PitchClass) -> bool {
        self.members.contains(&pc)
    }
}

pub fn scale_contains(scale: &Scale, pitch: Pitch) -> bool {
    scale.contains_class(pitch.pitch_class())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset_pulse: u32,
    pub duration_pulses: u32,
    /// `None` for unpitched percussion.
    pub pitch: Option<Pitch>,
    pub velocity: f64,
}

impl NoteEvent {
    pub fn unpitched(onset_pulse: u32, duration_pulses: u32, velocity: f64) -> Self {
        Self {
            onset_pulse,
            duration_pulses,
            pitch: None,
            velocity,
        }
    }

    pub fn pitched(onset_pulse: u32, duration_pulses: u32, pitch: Pitch, velocity: f64) -> Self {
        Self {
            onset_pulse,
            duration_pulses,
            pitch: Some(pitch),
            velocity,
        }
    }
}

/// A fixed-length phrase on the pulse grid.
///
/// Events are sorted by onset (ties broken by pitch) so that equal patterns
/// always serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPattern")]
pub struct Pattern {
    length_measures: u32,
    events: Vec<NoteEvent>,
}

#[derive(Deserialize)]
struct RawPattern {
    length_measures: u32,
    events: Vec<NoteEvent>,
}

impl TryFrom<RawPattern> for Pattern {
    type Error = MusicError;

    fn try_from(raw: RawPattern) -> Result<Self, Self::Error> {
        if raw.length_measures == 0 {
            return Err(MusicError::InvalidPattern("length_measures must be >= 1".into()));
        }
        let sorted = raw
            .events
            .windows(2)
            .all(|w| event_key(&w[0]) <= event_key(&w[1]));
        if !sorted {
            return Err(MusicError::InvalidPattern("events are not sorted by onset".into()));
        }
        for e in &raw.events {
            check_event_fields(e)?;
        }
        Ok(Pattern {
            length_measures: raw.length_measures,
            events: raw.events,
        })
    }
}

fn event_key(e: &NoteEvent) -> (u32, Option<Pitch>, u32) {
    (e.onset_pulse, e.pitch, e.duration_pulses)
}

fn check_event_fields(e: &NoteEvent) -> Result<(), MusicError> {
    if e.duration_pulses == 0 {
        return Err(MusicError::InvalidPattern(format!(
            "event at pulse {} has zero duration",
            e.onset_pulse
        )));
    }
    if !(0.0..=1.0).contains(&e.velocity) {
        return Err(MusicError::InvalidPattern(format!(
            "event at pulse {} has velocity {} outside [0, 1]",
            e.onset_pulse, e.velocity
        )));
    }
    Ok(())
}

impl Pattern {
    /// Builds a pattern, sorting the events and checking every onset against
    /// the grid length.
    pub fn new(
        length_measures: u32,
        mut events: Vec<NoteEvent>,
        pulses_per_measure: u32,
    ) -> Result<Self, MusicError> {
        if length_measures == 0 {
            return Err(MusicError::InvalidPattern("length_measures must be >= 1".into()));
        }
        events.sort_by(|a, b| {
            event_key(a)
                .partial_cmp(&event_key(b))
                .expect("keys are totally ordered")
        });
        let pattern = Pattern {
            length_measures,
            events,
        };
        pattern.validate(pulses_per_measure)?;
        Ok(pattern)
    }

    /// Checks the grid-dependent invariants (onsets inside the pattern).
    pub fn validate(&self, pulses_per_measure: u32) -> Result<(), MusicError> {
        let len = self.length_pulses(pulses_per_measure);
        for e in &self.events {
            check_event_fields(e)?;
            if e.onset_pulse >= len {
                return Err(MusicError::InvalidPattern(format!(
                    "onset {} outside pattern of {len} pulses",
                    e.onset_pulse
                )));
            }
        }
        Ok(())
    }

    pub fn length_measures(&self) -> u32 {
        self.length_measures
    }

    pub fn length_pulses(&self, pulses_per_measure: u32) -> u32 {
        self.length_measures * pulses_per_measure
    }

    pub fn events(&self) -> &[NoteEvent] {
        &self.events
    }

    pub fn pitched_events(&self) -> impl Iterator<Item = (&NoteEvent, Pitch)> {
        self.events.iter().filter_map(|e| e.pitch.map(|p| (e, p)))
    }

    pub fn is_unpitched(&self) -> bool {
        self.events.iter().all(|e| e.pitch.is_none())
    }

    /// Repeats the pattern `times` times end to end.
    pub fn repeated(&self, times: u32, pulses_per_measure: u32) -> Pattern {
        let len = self.length_pulses(pulses_per_measure);
        let events = (0..times)
            .flat_map(|k| {
                self.events.iter().map(move |e| NoteEvent {
                    onset_pulse: e.onset_pulse + k * len,
                    ..e.clone()
                })
            })
            .collect();
        Pattern {
            length_measures: self.length_measures * times,
            events,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pattern serializes")
    }
}

/// Two-measure 3-2 son clave on a sixteenth-note grid in 4/4.
///
/// Strokes fall on pulses 0, 6, 12 (the "three" side) and 20, 24 (the
/// "two" side) of 32. The downbeat of each side is accented.
pub fn son_clave_pattern(config: &TimebaseConfig) -> Result<Pattern, MusicError> {
    if config.beats_per_measure() != 4 || config.pulses_per_beat() != 4 {
        return Err(MusicError::UnsupportedMeter(format!(
            "son clave needs 4 beats of 4 pulses, got {} beats of {} pulses",
            config.beats_per_measure(),
            config.pulses_per_beat()
        )));
    }
    const STROKES: [(u32, f64); 5] = [
        (0, ACCENT_VELOCITY),
        (6, SOFT_VELOCITY),
        (12, SOFT_VELOCITY),
        (20, ACCENT_VELOCITY),
        (24, SOFT_VELOCITY),
    ];
    let events = STROKES
        .iter()
        .map(|&(onset, vel)| NoteEvent::unpitched(onset, 2, vel))
        .collect();
    Pattern::new(2, events, config.pulses_per_measure())
}

/// Share of pitched events whose pitch class lies in `pentatonic`.
pub fn pentatonic_fraction(pattern: &Pattern, pentatonic: &Scale) -> Result<f64, MusicError> {
    let (inside, total) = pattern
        .pitched_events()
        .fold((0usize, 0usize), |(inside, total), (_, p)| {
            (inside + usize::from(scale_contains(pentatonic, p)), total + 1)
        });
    if total == 0 {
        return Err(MusicError::NoPitchedEvents);
    }
    Ok(inside as f64 / total as f64)
}
