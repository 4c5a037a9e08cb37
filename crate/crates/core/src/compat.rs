//! Symbolic compatibility analysis between loops.
//!
//! Two loops are overlaid at every legal relative start (whole measures,
//! `0..lcm(len a, len b)`), and the resulting cycle is scanned for
//! sustained dissonant co-soundings (interval class 1 or 6 held for at
//! least a beat) and for onset pile-ups. Loops repeat forever, so the
//! overlaid cycle is treated as circular.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::loopgen::{Loop, LoopLibrary};
use crate::music::{lcm, Pitch, TimebaseConfig};

pub const DEFAULT_PROLONGED_PULSES: u32 = 4;
pub const DEFAULT_MAX_COLLISION_DENSITY: f64 = 0.5;

/// Interval classes treated as dissonant.
pub const DISSONANT_CLASSES: [u8; 2] = [1, 6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompatSettings {
    pub pulses_per_measure: u32,
    /// Minimum co-sounding length (pulses) for a dissonance to count.
    pub prolonged_pulses: u32,
    /// A pair fails if more than this fraction of one loop's onsets land on
    /// the other's onsets.
    pub max_collision_density: f64,
}

impl CompatSettings {
    pub fn for_config(config: &TimebaseConfig) -> Self {
        Self {
            pulses_per_measure: config.pulses_per_measure(),
            prolonged_pulses: config.pulses_per_beat(),
            max_collision_density: DEFAULT_MAX_COLLISION_DENSITY,
        }
    }
}

impl Default for CompatSettings {
    fn default() -> Self {
        Self::for_config(&TimebaseConfig::default())
    }
}

/// Smaller of the semitone distance and its complement, 0..=6.
pub fn interval_class(a: Pitch, b: Pitch) -> u8 {
    let d = (i16::from(a.note_number()) - i16::from(b.note_number())).rem_euclid(12) as u8;
    d.min(12 - d)
}

pub fn is_dissonant(a: Pitch, b: Pitch) -> bool {
    DISSONANT_CLASSES.contains(&interval_class(a, b))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DissonanceIncident {
    /// Position in the overlaid cycle, counted from the start of `a`.
    pub start_pulse: u32,
    pub duration_pulses: u32,
    pub pitch_a: Pitch,
    pub pitch_b: Pitch,
    pub interval_class: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissonanceReport {
    pub offset_measures: u32,
    pub incidents: Vec<DissonanceIncident>,
}

impl DissonanceReport {
    pub fn worst_duration(&self) -> u32 {
        self.incidents
            .iter()
            .map(|i| i.duration_pulses)
            .max()
            .unwrap_or(0)
    }
}

/// Length of the overlaid cycle of two loops, in measures.
pub fn cycle_measures(a: &Loop, b: &Loop) -> u32 {
    lcm(
        u64::from(a.pattern.length_measures()),
        u64::from(b.pattern.length_measures()),
    ) as u32
}

/// Half-open linear span `[start, end)` on the cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Span {
    start: u32,
    end: u32,
}

/// Splits a circular interval into at most two linear spans on `[0, cycle)`.
fn circular_spans(start: u32, len: u32, cycle: u32) -> impl Iterator<Item = Span> {
    let start = start % cycle;
    let len = len.min(cycle);
    let end = start + len;
    let (first, second) = if end <= cycle {
        (Span { start, end }, None)
    } else {
        (
            Span { start, end: cycle },
            Some(Span {
                start: 0,
                end: end - cycle,
            }),
        )
    };
    std::iter::once(first).chain(second)
}

/// One note of a loop unrolled onto the overlaid cycle.
struct PlacedNote {
    pitch: Pitch,
    spans: Vec<Span>,
}

fn place_pitched(lp: &Loop, shift_pulses: u32, cycle: u32, ppm: u32) -> Vec<PlacedNote> {
    let len = lp.pattern.length_pulses(ppm);
    let reps = cycle / len;
    let mut out = Vec::new();
    for rep in 0..reps {
        for (ev, pitch) in lp.pattern.pitched_events() {
            let start = ev.onset_pulse + rep * len + shift_pulses;
            out.push(PlacedNote {
                pitch,
                spans: circular_spans(start, ev.duration_pulses, cycle).collect(),
            });
        }
    }
    out
}

/// Merges spans on a circle; the returned (start, len) runs may wrap.
fn merge_circular(mut spans: Vec<Span>, cycle: u32) -> Vec<(u32, u32)> {
    spans.sort();
    let mut merged: Vec<Span> = Vec::new();
    for s in spans {
        match merged.last_mut() {
            Some(last) if s.start <= last.end => last.end = last.end.max(s.end),
            _ => merged.push(s),
        }
    }
    if merged.len() > 1 && merged[0].start == 0 && merged.last().unwrap().end == cycle {
        let head = merged.remove(0);
        let tail = merged.last_mut().unwrap();
        tail.end = cycle + head.end;
    }
    merged
        .into_iter()
        .map(|s| {
            if s.start == 0 && s.end == cycle {
                (0, cycle)
            } else {
                (s.start, s.end - s.start)
            }
        })
        .collect()
}

/// Sustained dissonances between `a` and `b` when `b` enters
/// `offset_measures` after `a`.
pub fn overlap_dissonance(
    a: &Loop,
    b: &Loop,
    offset_measures: u32,
    settings: &CompatSettings,
) -> DissonanceReport {
    let ppm = settings.pulses_per_measure;
    let cycle_m = cycle_measures(a, b);
    debug_assert!(offset_measures < cycle_m);
    let cycle = cycle_m * ppm;
    let notes_a = place_pitched(a, 0, cycle, ppm);
    let notes_b = place_pitched(b, offset_measures * ppm, cycle, ppm);

    let mut clashes: BTreeMap<(Pitch, Pitch), Vec<Span>> = BTreeMap::new();
    for na in &notes_a {
        for nb in &notes_b {
            if !is_dissonant(na.pitch, nb.pitch) {
                continue;
            }
            for sa in &na.spans {
                for sb in &nb.spans {
                    let start = sa.start.max(sb.start);
                    let end = sa.end.min(sb.end);
                    if start < end {
                        clashes
                            .entry((na.pitch, nb.pitch))
                            .or_default()
                            .push(Span { start, end });
                    }
                }
            }
        }
    }

    let mut incidents: Vec<DissonanceIncident> = clashes
        .into_iter()
        .flat_map(|((pa, pb), spans)| {
            merge_circular(spans, cycle)
                .into_iter()
                .filter(|&(_, len)| len >= settings.prolonged_pulses)
                .map(move |(start, len)| DissonanceIncident {
                    start_pulse: start,
                    duration_pulses: len,
                    pitch_a: pa,
                    pitch_b: pb,
                    interval_class: interval_class(pa, pb),
                })
        })
        .collect();
    incidents.sort();
    DissonanceReport {
        offset_measures,
        incidents,
    }
}

fn onset_pulses(lp: &Loop, shift_pulses: u32, cycle: u32, ppm: u32) -> Vec<u32> {
    let len = lp.pattern.length_pulses(ppm);
    (0..cycle / len)
        .flat_map(|rep| {
            lp.pattern
                .events()
                .iter()
                .map(move |e| (e.onset_pulse + rep * len + shift_pulses) % cycle)
        })
        .collect()
}

/// Fraction of `a`'s onsets that land exactly on an onset of `b`.
pub fn onset_collision_density(
    a: &Loop,
    b: &Loop,
    offset_measures: u32,
    settings: &CompatSettings,
) -> f64 {
    let ppm = settings.pulses_per_measure;
    let cycle = cycle_measures(a, b) * ppm;
    let onsets_a = onset_pulses(a, 0, cycle, ppm);
    if onsets_a.is_empty() {
        return 0.0;
    }
    let onsets_b: BTreeSet<u32> = onset_pulses(b, offset_measures * ppm, cycle, ppm)
        .into_iter()
        .collect();
    let hits = onsets_a.iter().filter(|p| onsets_b.contains(p)).count();
    hits as f64 / onsets_a.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetFinding {
    pub offset_measures: u32,
    pub dissonance_pulses: u32,
    pub incidents: usize,
    /// Larger of the two directed collision densities.
    pub collision_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub a: String,
    pub b: String,
    pub offsets_checked: u32,
    pub worst_offset: u32,
    pub worst_dissonance_pulses: u32,
    pub max_collision_density: f64,
    pub failing_offsets: Vec<u32>,
    pub pass: bool,
}

fn evaluate_offset(a: &Loop, b: &Loop, offset: u32, settings: &CompatSettings) -> OffsetFinding {
    let cycle = cycle_measures(a, b);
    let report = overlap_dissonance(a, b, offset, settings);
    let forward = onset_collision_density(a, b, offset, settings);
    let backward = onset_collision_density(b, a, (cycle - offset) % cycle, settings);
    OffsetFinding {
        offset_measures: offset,
        dissonance_pulses: report.worst_duration(),
        incidents: report.incidents.len(),
        collision_density: forward.max(backward),
    }
}

impl OffsetFinding {
    fn fails(&self, settings: &CompatSettings) -> bool {
        self.incidents > 0 || self.collision_density > settings.max_collision_density
    }
}

/// Every offset finding for a pair, in offset order.
pub fn scan_pair(a: &Loop, b: &Loop, settings: &CompatSettings) -> Vec<OffsetFinding> {
    (0..cycle_measures(a, b))
        .map(|o| evaluate_offset(a, b, o, settings))
        .collect()
}

/// Checks `a` against `b` at every measure offset of their common cycle.
pub fn check_pair(a: &Loop, b: &Loop, settings: &CompatSettings) -> PairReport {
    let findings = scan_pair(a, b, settings);
    let failing_offsets: Vec<u32> = findings
        .iter()
        .filter(|f| f.fails(settings))
        .map(|f| f.offset_measures)
        .collect();
    let key = |f: &OffsetFinding| (f.fails(settings), f.dissonance_pulses, f.collision_density);
    let mut worst = &findings[0];
    for f in &findings[1..] {
        if key(f).partial_cmp(&key(worst)) == Some(std::cmp::Ordering::Greater) {
            worst = f;
        }
    }
    PairReport {
        a: a.id.clone(),
        b: b.id.clone(),
        offsets_checked: findings.len() as u32,
        worst_offset: worst.offset_measures,
        worst_dissonance_pulses: findings.iter().map(|f| f.dissonance_pulses).max().unwrap_or(0),
        max_collision_density: findings
            .iter()
            .map(|f| f.collision_density)
            .fold(0.0, f64::max),
        pass: failing_offsets.is_empty(),
        failing_offsets,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatMatrix {
    pub settings: CompatSettings,
    pub loops: Vec<String>,
    /// Unordered pairs `(i, j)`, `i < j`, in row-major order of `loops`.
    pub pairs: Vec<PairReport>,
    pub pass: bool,
}

impl CompatMatrix {
    fn index_of(&self, id: &str) -> Option<usize> {
        self.loops.iter().position(|l| l == id)
    }

    pub fn pair(&self, a: &str, b: &str) -> Option<&PairReport> {
        let (i, j) = (self.index_of(a)?, self.index_of(b)?);
        if i == j {
            return None;
        }
        let (i, j) = (i.min(j), i.max(j));
        let n = self.loops.len();
        // Row-major offset of (i, j) in the strict upper triangle.
        let k = i * (2 * n - i - 1) / 2 + (j - i - 1);
        self.pairs.get(k)
    }

    /// Verdict for an unordered pair; `None` for unknown ids or `a == b`.
    pub fn verdict(&self, a: &str, b: &str) -> Option<bool> {
        self.pair(a, b).map(|p| p.pass)
    }

    pub fn failing_pairs(&self) -> impl Iterator<Item = &PairReport> {
        self.pairs.iter().filter(|p| !p.pass)
    }

    /// Human-readable grid: `.` pass, `X` fail, `-` diagonal.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let width = self.loops.iter().map(String::len).max().unwrap_or(0);
        let _ = write!(out, "{:width$} ", "");
        for id in &self.loops {
            let _ = write!(out, " {}", &id[id.len().saturating_sub(2)..]);
        }
        out.push('\n');
        for a in &self.loops {
            let _ = write!(out, "{a:width$} ");
            for b in &self.loops {
                let cell = match self.verdict(a, b) {
                    None => " -",
                    Some(true) => " .",
                    Some(false) => " X",
                };
                let _ = write!(out, " {cell}");
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{} pairs checked, {} failing: {}",
            self.pairs.len(),
            self.failing_pairs().count(),
            if self.pass { "PASS" } else { "FAIL" }
        );
        for p in self.failing_pairs() {
            let _ = writeln!(
                out,
                "  {} x {}: worst offset {} (dissonance {} pulses, collision density {:.3})",
                p.a, p.b, p.worst_offset, p.worst_dissonance_pulses, p.max_collision_density
            );
        }
        out
    }
}

/// Checks every unordered pair among the given loops.
pub fn check_loops(loops: &[&Loop], settings: &CompatSettings, exec: Exec) -> CompatMatrix {
    let pairs: Vec<(usize, usize)> = (0..loops.len())
        .flat_map(|i| (i + 1..loops.len()).map(move |j| (i, j)))
        .collect();
    let reports = exec.map(&pairs, |&(i, j)| check_pair(loops[i], loops[j], settings));
    CompatMatrix {
        settings: *settings,
        loops: loops.iter().map(|l| l.id.clone()).collect(),
        pass: reports.iter().all(|r| r.pass),
        pairs: reports,
    }
}

/// Checks all bed and collage loops of a library pairwise.
pub fn check_library(lib: &LoopLibrary, exec: Exec) -> CompatMatrix {
    check_library_with(lib, &CompatSettings::for_config(&lib.config), exec)
}

pub fn check_library_with(lib: &LoopLibrary, settings: &CompatSettings, exec: Exec) -> CompatMatrix {
    let loops: Vec<&Loop> = lib.beds.iter().chain(&lib.collages).collect();
    check_loops(&loops, settings, exec)
}

/// Number of distinct unordered `k`-phrase stacks drawn from `n` phrases.
pub fn enumerate_arrangements(n_phrases: u64, k: u64) -> u128 {
    assert!(k <= n_phrases, "k must not exceed n");
    let k = k.min(n_phrases - k);
    (0..k).fold(1u128, |acc, i| {
        acc * u128::from(n_phrases - i) / u128::from(i + 1)
    })
}
