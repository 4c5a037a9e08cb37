//! Seeded generation of the loop library.
//!
//! A library holds six unpitched bed loops (priority 1-6), twelve pitched
//! collage loops (one unique timbre each) and twelve announcements (a bell
//! strike plus a bar of tolls in the matching collage timbre). Collage loops
//! are drawn from per-voice rhythm and register tables and then tested
//! against every loop generated before them; a candidate that fails any
//! pairwise check is redrawn.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compat::{check_library_with, check_pair, CompatSettings};
use crate::exec::Exec;
use crate::music::{
    pentatonic_fraction, scale_contains, son_clave_pattern, MusicError, NoteEvent, Pattern,
    Pitch, Scale, TimebaseConfig, ACCENT_VELOCITY, SOFT_VELOCITY,
};

pub const BED_COUNT: u8 = 6;
pub const COLLAGE_COUNT: u8 = 12;
pub const STATION_COUNT: u8 = 6;
pub const SLOTS_PER_STATION: u8 = 2;
pub const BED_MEASURES: u32 = 16;
pub const COLLAGE_MEASURES: u32 = 8;
pub const MAX_ATTEMPTS: u32 = 100;
pub const MIN_PENTATONIC_FRACTION: f64 = 0.7;
pub const MIN_OFFBEAT_FRACTION: f64 = 0.25;
pub const LIBRARY_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 1;

/// Bell notes per station: G-major triad ascending over two octaves,
/// G3 B3 D4 G4 B4 D5.
pub const STATION_BELL_NOTES: [u8; 6] = [55, 59, 62, 67, 71, 74];

/// Bed instrument by priority (index 0 = BED01).
pub const BED_INSTRUMENTS: [&str; 6] = ["clave", "shaker", "scraper", "rainstick", "cymbal", "tabla"];

/// Collage timbre by index (index 0 = C01).
pub const COLLAGE_TIMBRES: [&str; 12] = [
    "marimba",
    "vibraphone",
    "glockenspiel",
    "kulingtang",
    "almglocken",
    "orchestral-chimes",
    "angklung",
    "hand-bells",
    "boo-bams",
    "mbira",
    "balafon",
    "crotales",
];

pub const STATION_BELL_TIMBRE: &str = "station-bell";

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    Music(#[from] MusicError),
    #[error("GenerationExhausted: collage C{index:02} failed all {attempts} attempts")]
    GenerationExhausted { index: u8, attempts: u32 },
    #[error("{0} is not a collage loop")]
    NotACollage(String),
    #[error("invalid library: {0}")]
    InvalidLibrary(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimbreFamily {
    UnpitchedPercussion,
    PitchedMallet,
    Bell,
}

impl TimbreFamily {
    pub fn is_pitched(self) -> bool {
        !matches!(self, TimbreFamily::UnpitchedPercussion)
    }
}

/// Synthesis parameters for one instrument voice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timbre {
    pub id: String,
    pub family: TimbreFamily,
    /// Time to decay by 60 dB, seconds.
    pub decay_s: f64,
    pub brightness: f64,
    pub inharmonicity: f64,
    pub noise_fraction: f64,
}

// id, family, decay, brightness, inharmonicity, noise
const CATALOG: &[(&str, TimbreFamily, f64, f64, f64, f64)] = {
    use TimbreFamily::*;
    &[
        ("clave", UnpitchedPercussion, 0.25, 0.75, 0.30, 0.10),
        ("shaker", UnpitchedPercussion, 0.12, 0.90, 0.00, 0.95),
        ("scraper", UnpitchedPercussion, 0.30, 0.70, 0.00, 0.90),
        ("rainstick", UnpitchedPercussion, 1.60, 0.80, 0.00, 0.98),
        ("cymbal", UnpitchedPercussion, 2.50, 0.95, 0.90, 0.85),
        ("tabla", UnpitchedPercussion, 0.60, 0.45, 0.20, 0.20),
        ("marimba", PitchedMallet, 0.80, 0.35, 0.05, 0.02),
        ("vibraphone", PitchedMallet, 2.20, 0.40, 0.02, 0.00),
        ("glockenspiel", PitchedMallet, 1.80, 0.90, 0.08, 0.00),
        ("kulingtang", PitchedMallet, 1.50, 0.50, 0.25, 0.02),
        ("almglocken", Bell, 1.40, 0.60, 0.35, 0.02),
        ("orchestral-chimes", Bell, 3.00, 0.60, 0.45, 0.00),
        ("angklung", PitchedMallet, 0.70, 0.55, 0.10, 0.10),
        ("hand-bells", Bell, 2.20, 0.55, 0.30, 0.00),
        ("boo-bams", PitchedMallet, 0.50, 0.25, 0.05, 0.10),
        ("mbira", PitchedMallet, 1.00, 0.50, 0.15, 0.05),
        ("balafon", PitchedMallet, 0.70, 0.45, 0.12, 0.08),
        ("crotales", Bell, 2.50, 0.95, 0.40, 0.00),
        ("station-bell", Bell, 3.50, 0.60, 0.50, 0.00),
    ]
};

impl Timbre {
    pub fn catalog(id: &str) -> Option<Timbre> {
        CATALOG
            .iter()
            .find(|t| t.0 == id)
            .map(|&(id, family, decay_s, brightness, inharmonicity, noise_fraction)| Timbre {
                id: id.to_string(),
                family,
                decay_s,
                brightness,
                inharmonicity,
                noise_fraction,
            })
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.decay_s.is_finite() && self.decay_s > 0.0)
            || !unit(self.brightness)
            || !unit(self.inharmonicity)
            || !unit(self.noise_fraction)
        {
            return Err(GenError::InvalidLibrary(format!(
                "timbre {} has parameters out of range",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LoopRole {
    Bed { priority: u8 },
    Collage { index: u8 },
    Announcement { station: u8, slot: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loop {
    pub id: String,
    pub role: LoopRole,
    pub pattern: Pattern,
    pub timbre: Timbre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnouncementSpec {
    pub id: String,
    pub station: u8,
    pub slot: u8,
    pub collage_id: String,
    pub bell_pitch: Pitch,
    pub bell_timbre: Timbre,
    /// One measure of tolls in the collage's timbre.
    pub toll_pattern: Pattern,
    pub toll_timbre: Timbre,
}

impl AnnouncementSpec {
    pub fn toll_loop(&self) -> Loop {
        Loop {
            id: self.id.clone(),
            role: LoopRole::Announcement {
                station: self.station,
                slot: self.slot,
            },
            pattern: self.toll_pattern.clone(),
            timbre: self.toll_timbre.clone(),
        }
    }
}

pub fn bed_id(priority: u8) -> String {
    format!("BED{priority:02}")
}

pub fn collage_id(index: u8) -> String {
    format!("C{index:02}")
}

pub fn announcement_id(index: u8) -> String {
    format!("ANN{index:02}")
}

/// Station `s`, slot `k` owns collage `2(s-1)+k`.
pub fn collage_index_for(station: u8, slot: u8) -> u8 {
    2 * (station - 1) + slot
}

/// Inverse of [`collage_index_for`].
pub fn station_slot_for(collage_index: u8) -> (u8, u8) {
    ((collage_index - 1) / 2 + 1, (collage_index - 1) % 2 + 1)
}

pub fn station_bell(station: u8) -> Pitch {
    Pitch::new(i64::from(STATION_BELL_NOTES[usize::from(station - 1)])).expect("static note")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopLibrary {
    pub format_version: u32,
    pub seed: u64,
    pub config: TimebaseConfig,
    pub beds: Vec<Loop>,
    pub collages: Vec<Loop>,
    pub announcements: Vec<AnnouncementSpec>,
}

impl LoopLibrary {
    pub fn find_loop(&self, id: &str) -> Option<&Loop> {
        self.beds.iter().chain(&self.collages).find(|l| l.id == id)
    }

    pub fn bed(&self, priority: u8) -> Option<&Loop> {
        self.beds.get(usize::from(priority).checked_sub(1)?)
    }

    pub fn collage(&self, index: u8) -> Option<&Loop> {
        self.collages.get(usize::from(index).checked_sub(1)?)
    }

    pub fn announcement(&self, index: u8) -> Option<&AnnouncementSpec> {
        self.announcements.get(usize::from(index).checked_sub(1)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("library serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GenError> {
        let lib: LoopLibrary =
            serde_json::from_str(text).map_err(|e| GenError::InvalidLibrary(e.to_string()))?;
        lib.validate()?;
        Ok(lib)
    }

    /// Structural checks; compatibility is verified separately.
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidLibrary(m));
        if self.format_version != LIBRARY_FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        if self.beds.len() != usize::from(BED_COUNT)
            || self.collages.len() != usize::from(COLLAGE_COUNT)
            || self.announcements.len() != usize::from(COLLAGE_COUNT)
        {
            return bad("expected 6 beds, 12 collages and 12 announcements".into());
        }
        let ppm = self.config.pulses_per_measure();
        let dominant = Scale::g_dominant();
        let mut ids = BTreeSet::new();
        for (i, bed) in self.beds.iter().enumerate() {
            let priority = i as u8 + 1;
            if bed.id != bed_id(priority) || bed.role != (LoopRole::Bed { priority }) {
                return bad(format!("bed {priority} has id/role {} {:?}", bed.id, bed.role));
            }
            if bed.pattern.length_measures() != BED_MEASURES || !bed.pattern.is_unpitched() {
                return bad(format!("{} must be a 16-measure unpitched loop", bed.id));
            }
            if bed.timbre.family.is_pitched() {
                return bad(format!("{} uses a pitched timbre", bed.id));
            }
        }
        for (i, c) in self.collages.iter().enumerate() {
            let index = i as u8 + 1;
            if c.id != collage_id(index) || c.role != (LoopRole::Collage { index }) {
                return bad(format!("collage {index} has id/role {} {:?}", c.id, c.role));
            }
            if !c.timbre.family.is_pitched() || c.pattern.events().iter().any(|e| e.pitch.is_none()) {
                return bad(format!("{} must be fully pitched", c.id));
            }
            if c.pattern.pitched_events().any(|(_, p)| !scale_contains(&dominant, p)) {
                return bad(format!("{} leaves the G dominant scale", c.id));
            }
        }
        for l in self.beds.iter().chain(&self.collages) {
            l.pattern.validate(ppm)?;
            l.timbre.validate()?;
            if !ids.insert(l.id.clone()) {
                return bad(format!("duplicate loop id {}", l.id));
            }
        }
        let timbres: BTreeSet<_> = self.collages.iter().map(|c| c.timbre.id.as_str()).collect();
        if timbres.len() != self.collages.len() {
            return bad("collage timbres are not pairwise distinct".into());
        }
        let beds: BTreeSet<_> = self.beds.iter().map(|c| c.timbre.id.as_str()).collect();
        if beds.len() != self.beds.len() {
            return bad("bed instruments are not pairwise distinct".into());
        }
        for (i, a) in self.announcements.iter().enumerate() {
            let index = i as u8 + 1;
            let (station, slot) = station_slot_for(index);
            let collage = &self.collages[i];
            if a.id != announcement_id(index) || a.station != station || a.slot != slot {
                return bad(format!("announcement {index} is mislabeled"));
            }
            if a.collage_id != collage.id || a.toll_timbre.id != collage.timbre.id {
                return bad(format!("{} does not toll in {}'s timbre", a.id, collage.id));
            }
            if a.bell_pitch != station_bell(station) {
                return bad(format!("{} rings the wrong bell note", a.id));
            }
            if a.toll_pattern.length_measures() != 1 {
                return bad(format!("{} toll pattern must be one measure", a.id));
            }
            a.toll_pattern.validate(ppm)?;
            a.bell_timbre.validate()?;
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream per (seed, purpose, index, attempt).
fn stream(seed: u64, purpose: u64, index: u64, attempt: u64) -> ChaCha8Rng {
    let s = splitmix64(splitmix64(splitmix64(seed ^ purpose.rotate_left(48)) ^ index) ^ attempt);
    ChaCha8Rng::seed_from_u64(s)
}

const BED_STREAM: u64 = 0xBED;
const COLLAGE_STREAM: u64 = 0xC011A6E;

fn require_sixteenth_grid(config: &TimebaseConfig) -> Result<(), GenError> {
    if config.beats_per_measure() != 4 || config.pulses_per_beat() != 4 {
        return Err(MusicError::UnsupportedMeter(format!(
            "loop generation needs 4 beats of 4 pulses, got {} beats of {} pulses",
            config.beats_per_measure(),
            config.pulses_per_beat()
        ))
        .into());
    }
    Ok(())
}

/// Per-measure positions a bed may strike. Beds other than the clave live
/// on odd sixteenths, disjoint from each other, so they interlock with the
/// clave and with the collages' mostly-eighth-note grid.
struct BedVoice {
    residues: &'static [u32],
    /// Strike only in measures where `measure % every == phase`.
    every: u32,
    phase: u32,
    keep_probability: f64,
    duration: u32,
}

const BED_VOICES: [BedVoice; 5] = [
    // shaker
    BedVoice { residues: &[3, 11], every: 1, phase: 0, keep_probability: 0.8, duration: 1 },
    // scraper
    BedVoice { residues: &[1, 9], every: 1, phase: 0, keep_probability: 0.55, duration: 2 },
    // rainstick
    BedVoice { residues: &[5], every: 2, phase: 1, keep_probability: 1.0, duration: 24 },
    // cymbal
    BedVoice { residues: &[13], every: 4, phase: 3, keep_probability: 1.0, duration: 32 },
    // tabla
    BedVoice { residues: &[7, 15], every: 1, phase: 0, keep_probability: 0.7, duration: 2 },
];

/// One 16-measure bed loop. Priority 1 carries the son clave; the others
/// are seeded sparse figures on their own sixteenth positions.
pub fn generate_bed(priority: u8, seed: u64, config: &TimebaseConfig) -> Result<Loop, GenError> {
    assert!((1..=BED_COUNT).contains(&priority), "bed priority out of range");
    require_sixteenth_grid(config)?;
    let ppm = config.pulses_per_measure();
    let pattern = if priority == 1 {
        son_clave_pattern(config)?.repeated(BED_MEASURES / 2, ppm)
    } else {
        let voice = &BED_VOICES[usize::from(priority - 2)];
        let mut rng = stream(seed, BED_STREAM, u64::from(priority), 0);
        let mut events = Vec::new();
        for m in 0..BED_MEASURES {
            if m % voice.every != voice.phase {
                continue;
            }
            for (k, &r) in voice.residues.iter().enumerate() {
                if rng.random_bool(voice.keep_probability) {
                    let accent = k == 0 && m % 4 == voice.phase;
                    events.push(NoteEvent::unpitched(
                        m * ppm + r,
                        voice.duration,
                        if accent { ACCENT_VELOCITY } else { SOFT_VELOCITY },
                    ));
                }
            }
        }
        if events.is_empty() {
            events.push(NoteEvent::unpitched(voice.residues[0], voice.duration, SOFT_VELOCITY));
        }
        Pattern::new(BED_MEASURES, events, ppm)?
    };
    Ok(Loop {
        id: bed_id(priority),
        role: LoopRole::Bed { priority },
        pattern,
        timbre: Timbre::catalog(BED_INSTRUMENTS[usize::from(priority - 1)]).expect("bed timbre"),
    })
}

/// Register and rhythmic character of a collage voice.
struct CollageVoice {
    low: u8,
    high: u8,
    /// Expected sounding beats per measure (out of 4).
    busy: f64,
    max_duration: u32,
}

const COLLAGE_VOICES: [CollageVoice; 12] = [
    CollageVoice { low: 55, high: 79, busy: 2.2, max_duration: 6 },  // marimba
    CollageVoice { low: 60, high: 84, busy: 1.6, max_duration: 12 }, // vibraphone
    CollageVoice { low: 79, high: 96, busy: 1.4, max_duration: 8 },  // glockenspiel
    CollageVoice { low: 60, high: 79, busy: 1.8, max_duration: 8 },  // kulingtang
    CollageVoice { low: 62, high: 86, busy: 1.4, max_duration: 8 },  // almglocken
    CollageVoice { low: 60, high: 79, busy: 1.0, max_duration: 16 }, // orchestral chimes
    CollageVoice { low: 62, high: 86, busy: 2.0, max_duration: 4 },  // angklung
    CollageVoice { low: 67, high: 91, busy: 1.2, max_duration: 12 }, // hand bells
    CollageVoice { low: 43, high: 67, busy: 2.0, max_duration: 6 },  // boo-bams
    CollageVoice { low: 55, high: 79, busy: 2.2, max_duration: 4 },  // mbira
    CollageVoice { low: 55, high: 79, busy: 2.0, max_duration: 6 },  // balafon
    CollageVoice { low: 84, high: 100, busy: 1.0, max_duration: 12 }, // crotales
];

/// One-beat rhythm cells (onsets within a four-pulse beat) and their weight.
const BEAT_CELLS: [(&[u32], u32); 7] = [
    (&[0], 4),
    (&[2], 5),
    (&[0, 2], 3),
    (&[0, 3], 2),
    (&[1, 2], 1),
    (&[3], 2),
    (&[2, 3], 1),
];

const PASSING_CLASSES: [u8; 3] = [0, 5, 6]; // C, F, F#

fn pick_cell(rng: &mut ChaCha8Rng) -> &'static [u32] {
    let total: u32 = BEAT_CELLS.iter().map(|c| c.1).sum();
    let mut roll = rng.random_range(0..total);
    for (cell, w) in BEAT_CELLS {
        if roll < w {
            return cell;
        }
        roll -= w;
    }
    unreachable!()
}

fn phrase_onsets(rng: &mut ChaCha8Rng, voice: &CollageVoice) -> Vec<u32> {
    // Two measures of beat cells.
    let mut onsets = Vec::new();
    for beat in 0..8u32 {
        if rng.random_bool((voice.busy / 4.0).min(1.0)) {
            onsets.extend(pick_cell(rng).iter().map(|o| beat * 4 + o));
        }
    }
    if onsets.is_empty() {
        onsets.push(rng.random_range(0..8u32) * 4 + 2);
    }
    onsets
}

fn pentatonic_notes(voice: &CollageVoice) -> Vec<u8> {
    let pent = Scale::g_pentatonic();
    (voice.low..=voice.high)
        .filter(|&n| pent.contains_class(Pitch::new(i64::from(n)).unwrap().pitch_class()))
        .collect()
}

fn draw_collage(index: u8, rng: &mut ChaCha8Rng, ppm: u32) -> Result<Pattern, MusicError> {
    let voice = &COLLAGE_VOICES[usize::from(index - 1)];
    let phrase_a = phrase_onsets(rng, voice);
    let phrase_b = phrase_onsets(rng, voice);
    let form: &[bool] = match rng.random_range(0..3) {
        0 => &[false, false, false, true],
        1 => &[false, true, false, true],
        _ => &[false, false, true, false],
    };
    // (onset, opens a phrase)
    let onsets: Vec<(u32, bool)> = form
        .iter()
        .enumerate()
        .flat_map(|(k, &use_b)| {
            let phrase = if use_b { &phrase_b } else { &phrase_a };
            phrase
                .iter()
                .enumerate()
                .map(move |(i, o)| (o + k as u32 * 2 * ppm, i == 0))
        })
        .collect();
    let total = COLLAGE_MEASURES * ppm;

    let notes = pentatonic_notes(voice);
    let mut pos = rng.random_range(0..notes.len());
    let mut last_passing: Option<(u8, u32)> = None;
    let mut events = Vec::with_capacity(onsets.len());
    for (i, &(onset, opens_phrase)) in onsets.iter().enumerate() {
        let next = onsets.get(i + 1).map_or(total + onsets[0].0, |n| n.0);
        let gap = next - onset;
        let step: i64 = rng.random_range(-2..=2);
        pos = (pos as i64 + step).clamp(0, notes.len() as i64 - 1) as usize;
        let anchor = notes[pos];
        let passing = rng.random_bool(0.12).then(|| {
            let pc = PASSING_CLASSES[rng.random_range(0..PASSING_CLASSES.len())];
            // Nearest note of that class to the anchor, kept in register.
            let base = anchor - anchor % 12 + pc;
            [base.saturating_sub(12), base, base + 12]
                .into_iter()
                .filter(|n| (voice.low..=voice.high).contains(n))
                .min_by_key(|&n| (i16::from(n) - i16::from(anchor)).abs())
        });
        let velocity = if opens_phrase { ACCENT_VELOCITY } else { SOFT_VELOCITY };
        match passing.flatten() {
            // A passing tone is short and never repeats within a beat, so it
            // cannot sustain a clash against anything.
            Some(n) if last_passing.is_none_or(|(p, at)| p != n || onset >= at + 8) => {
                events.push(NoteEvent::pitched(onset, gap.clamp(1, 2), Pitch::new(i64::from(n))?, velocity));
                last_passing = Some((n, onset));
            }
            _ => {
                events.push(NoteEvent::pitched(
                    onset,
                    gap.clamp(1, voice.max_duration),
                    Pitch::new(i64::from(anchor))?,
                    velocity,
                ));
            }
        }
    }
    Pattern::new(COLLAGE_MEASURES, events, ppm)
}

fn offbeat_fraction(pattern: &Pattern, pulses_per_beat: u32) -> f64 {
    let n = pattern.events().len();
    if n == 0 {
        return 0.0;
    }
    let off = pattern
        .events()
        .iter()
        .filter(|e| e.onset_pulse % pulses_per_beat != 0)
        .count();
    off as f64 / n as f64
}

fn collage_constraints_hold(pattern: &Pattern, config: &TimebaseConfig) -> bool {
    let dominant = Scale::g_dominant();
    pattern.pitched_events().all(|(_, p)| scale_contains(&dominant, p))
        && pentatonic_fraction(pattern, &Scale::g_pentatonic())
            .is_ok_and(|f| f >= MIN_PENTATONIC_FRACTION)
        && offbeat_fraction(pattern, config.pulses_per_beat()) >= MIN_OFFBEAT_FRACTION
}

fn collage_loop(index: u8, pattern: Pattern) -> Loop {
    Loop {
        id: collage_id(index),
        role: LoopRole::Collage { index },
        pattern,
        timbre: Timbre::catalog(COLLAGE_TIMBRES[usize::from(index - 1)]).expect("collage timbre"),
    }
}

/// One collage loop satisfying the scale, pentatonic-emphasis and
/// syncopation constraints, without any compatibility test.
pub fn generate_collage(index: u8, seed: u64, config: &TimebaseConfig) -> Result<Loop, GenError> {
    generate_collage_against(index, seed, config, &[], Exec::Sequential)
}

/// Like [`generate_collage`], but redraws until the loop also passes
/// [`check_pair`] against every loop in `existing`.
pub fn generate_collage_against(
    index: u8,
    seed: u64,
    config: &TimebaseConfig,
    existing: &[&Loop],
    exec: Exec,
) -> Result<Loop, GenError> {
    assert!((1..=COLLAGE_COUNT).contains(&index), "collage index out of range");
    require_sixteenth_grid(config)?;
    let settings = CompatSettings::for_config(config);
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = stream(seed, COLLAGE_STREAM, u64::from(index), u64::from(attempt));
        let pattern = draw_collage(index, &mut rng, config.pulses_per_measure())?;
        if !collage_constraints_hold(&pattern, config) {
            continue;
        }
        let candidate = collage_loop(index, pattern);
        let verdicts = exec.map(existing, |other| check_pair(&candidate, other, &settings).pass);
        if verdicts.into_iter().all(|v| v) {
            return Ok(candidate);
        }
    }
    Err(GenError::GenerationExhausted {
        index,
        attempts: MAX_ATTEMPTS,
    })
}

fn most_frequent_pitch(pattern: &Pattern) -> Option<Pitch> {
    let mut counts: BTreeMap<Pitch, usize> = BTreeMap::new();
    for (_, p) in pattern.pitched_events() {
        *counts.entry(p).or_default() += 1;
    }
    // Highest count; ties go to the lowest note.
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(p, _)| p)
}

/// Bell strike and toll bar announcing `collage` for a station slot.
pub fn announcement_for(
    station: u8,
    slot: u8,
    collage: &Loop,
    config: &TimebaseConfig,
) -> Result<AnnouncementSpec, GenError> {
    let LoopRole::Collage { index } = collage.role else {
        return Err(GenError::NotACollage(collage.id.clone()));
    };
    assert!((1..=STATION_COUNT).contains(&station) && (1..=SLOTS_PER_STATION).contains(&slot));
    let toll_pitch =
        most_frequent_pitch(&collage.pattern).ok_or_else(|| GenError::NotACollage(collage.id.clone()))?;
    let ppb = config.pulses_per_beat();
    let tolls = (0..config.beats_per_measure())
        .map(|beat| NoteEvent::pitched(beat * ppb, ppb, toll_pitch, SOFT_VELOCITY))
        .collect();
    Ok(AnnouncementSpec {
        id: announcement_id(index),
        station,
        slot,
        collage_id: collage.id.clone(),
        bell_pitch: station_bell(station),
        bell_timbre: Timbre::catalog(STATION_BELL_TIMBRE).expect("bell timbre"),
        toll_pattern: Pattern::new(1, tolls, config.pulses_per_measure())?,
        toll_timbre: collage.timbre.clone(),
    })
}

/// The full library for `seed`. Collages are generated in index order, each
/// tested against all beds and all earlier collages.
pub fn generate_library(seed: u64, config: &TimebaseConfig, exec: Exec) -> Result<LoopLibrary, GenError> {
    let priorities: Vec<u8> = (1..=BED_COUNT).collect();
    let beds = exec
        .map(&priorities, |&p| generate_bed(p, seed, config))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut collages: Vec<Loop> = Vec::with_capacity(usize::from(COLLAGE_COUNT));
    for index in 1..=COLLAGE_COUNT {
        let existing: Vec<&Loop> = beds.iter().chain(&collages).collect();
        let c = generate_collage_against(index, seed, config, &existing, exec)?;
        collages.push(c);
    }
    let announcements = collages
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (station, slot) = station_slot_for(i as u8 + 1);
            announcement_for(station, slot, c, config)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let lib = LoopLibrary {
        format_version: LIBRARY_FORMAT_VERSION,
        seed,
        config: *config,
        beds,
        collages,
        announcements,
    };
    lib.validate()?;
    debug_assert!(check_library_with(&lib, &CompatSettings::for_config(config), exec).pass);
    Ok(lib)
}
