//! Session mixdown from a schedule event log.
//!
//! A [`MixPlan`] lists every track placement (source audio, span, fade
//! envelope, pan) and renders measure-sized chunks independently, so the
//! chunks can be mixed in parallel. Tracks are summed in plan order.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use crate::exec::Exec;
use crate::loopgen::{LoopLibrary, LoopRole, BED_COUNT, COLLAGE_COUNT};
use crate::music::TimebaseConfig;
use crate::scheduler::{EventKind, ScheduleEvent};

use super::synth::{render_bell_mono, render_loop_mono, render_tolls_mono};
use super::{PcmBuffer, RenderError, CHANNELS};

/// Per-track gain; sixteen full-scale tracks can sum without clipping.
pub const TRACK_GAIN: f64 = 1.0 / 16.0;

/// Equal-power pan law for `pan` in `[-1, 1]`: returns `(left, right)`.
pub fn equal_power_pan(pan: f64) -> (f64, f64) {
    let theta = (pan.clamp(-1.0, 1.0) + 1.0) * FRAC_PI_2 / 2.0;
    (theta.cos(), theta.sin())
}

/// Collages spread evenly from 0.8 left (C01) to 0.8 right (C12).
pub fn collage_pan(index: u8) -> f64 {
    let i = f64::from(index.clamp(1, COLLAGE_COUNT) - 1);
    -0.8 + 1.6 * i / f64::from(COLLAGE_COUNT - 1)
}

/// Gain curve `cos(phase(t))` with `phase` piecewise linear between
/// breakpoints and held flat outside them. Phase 0 is full level, pi/2
/// silence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Envelope {
    points: Vec<(u64, f64)>,
}

impl Envelope {
    pub fn unity() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn phase_at(&self, t: u64) -> f64 {
        match self.points.iter().position(|&(pt, _)| pt > t) {
            None => self.points.last().map_or(0.0, |p| p.1),
            Some(0) => self.points[0].1,
            Some(i) => {
                let (t0, p0) = self.points[i - 1];
                let (t1, p1) = self.points[i];
                p0 + (p1 - p0) * (t - t0) as f64 / (t1 - t0) as f64
            }
        }
    }

    pub fn gain_at(&self, t: u64) -> f64 {
        self.phase_at(t).cos()
    }

    /// Constant gain over `[t0, t1)`, if the envelope is flat there.
    fn flat_over(&self, t0: u64, t1: u64) -> Option<f64> {
        let moving = self
            .points
            .windows(2)
            .any(|w| w[0].1 != w[1].1 && w[0].0 < t1 && w[1].0 > t0);
        (!moving).then(|| self.gain_at(t0))
    }

    /// Starts a fade at `t` toward `target` phase, interrupting any fade in
    /// progress. A full quarter-turn takes `full_frames`.
    fn fade(&mut self, t: u64, target: f64, full_frames: u64) {
        let from = self.phase_at(t);
        self.points.retain(|&(pt, _)| pt <= t);
        self.points.push((t, from));
        let frames = ((target - from).abs() / FRAC_PI_2 * full_frames as f64).round() as u64;
        if frames > 0 {
            self.points.push((t + frames, target));
        } else {
            self.points.last_mut().expect("just pushed").1 = target;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceKey {
    Loop(String),
    /// Station bell for the collage with this id.
    Bell(String),
    /// Toll bar for the collage with this id.
    Tolls(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub source: SourceKey,
    pub start_frame: u64,
    /// Exclusive; one-shots also stop when their audio runs out.
    pub end_frame: u64,
    pub looped: bool,
    pub envelope: Envelope,
    pub pan: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pub sample_rate_hz: u32,
    pub frames_per_chunk: u64,
    pub total_frames: u64,
    pub placements: Vec<Placement>,
}

/// Rendered mono audio for every source a plan needs.
#[derive(Debug, Clone, Default)]
pub struct SourceBank {
    sources: HashMap<SourceKey, Arc<Vec<f32>>>,
}

impl SourceBank {
    pub fn for_plan(
        plan: &MixPlan,
        library: &LoopLibrary,
        config: &TimebaseConfig,
        exec: Exec,
    ) -> Result<Self, RenderError> {
        let keys: Vec<SourceKey> = plan
            .placements
            .iter()
            .map(|p| p.source.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let rendered = exec.map(&keys, |k| render_source(k, library, config));
        let mut sources = HashMap::new();
        for (k, audio) in keys.into_iter().zip(rendered) {
            sources.insert(k, Arc::new(audio?));
        }
        Ok(Self { sources })
    }

    /// Every loop, bell and toll bar in the library.
    pub fn for_library(library: &LoopLibrary, config: &TimebaseConfig, exec: Exec) -> Result<Self, RenderError> {
        let mut keys: Vec<SourceKey> = library
            .beds
            .iter()
            .chain(&library.collages)
            .map(|l| SourceKey::Loop(l.id.clone()))
            .collect();
        for a in &library.announcements {
            keys.push(SourceKey::Bell(a.collage_id.clone()));
            keys.push(SourceKey::Tolls(a.collage_id.clone()));
        }
        let rendered = exec.map(&keys, |k| render_source(k, library, config));
        let mut sources = HashMap::new();
        for (k, audio) in keys.into_iter().zip(rendered) {
            sources.insert(k, Arc::new(audio?));
        }
        Ok(Self { sources })
    }

    pub fn insert(&mut self, key: SourceKey, mono: Vec<f32>) {
        self.sources.insert(key, Arc::new(mono));
    }

    pub fn get(&self, key: &SourceKey) -> Option<&[f32]> {
        self.sources.get(key).map(|a| a.as_slice())
    }
}

fn unknown(id: &str) -> RenderError {
    RenderError::UnknownLoopId(id.to_string())
}

pub(crate) fn render_source(
    key: &SourceKey,
    library: &LoopLibrary,
    config: &TimebaseConfig,
) -> Result<Vec<f32>, RenderError> {
    let announcement = |id: &str| {
        library
            .announcements
            .iter()
            .find(|a| a.collage_id == id || a.id == id)
            .ok_or_else(|| unknown(id))
    };
    match key {
        SourceKey::Loop(id) => render_loop_mono(library.find_loop(id).ok_or_else(|| unknown(id))?, config),
        SourceKey::Bell(id) => render_bell_mono(announcement(id)?, config),
        SourceKey::Tolls(id) => render_tolls_mono(announcement(id)?, config),
    }
}

fn payload<T: Clone>(value: &Option<T>, kind: EventKind) -> Result<T, RenderError> {
    value
        .clone()
        .ok_or_else(|| RenderError::MissingPayload(format!("{kind:?}")))
}

fn station_pan(station: u8) -> f64 {
    // Midway between the station's two collage slots.
    (collage_pan(2 * station.max(1) - 1) + collage_pan(2 * station.max(1))) / 2.0
}

/// Builds the placement list for `total_measures` of audio driven by
/// `events`. All beds sound from sample 0 until a fade says otherwise.
pub fn plan_session(
    events: &[ScheduleEvent],
    library: &LoopLibrary,
    total_measures: u64,
    config: &TimebaseConfig,
) -> Result<MixPlan, RenderError> {
    let spm = config.samples_per_measure();
    let total_frames = total_measures * spm;
    for e in events {
        if e.at_sample % spm != 0 {
            return Err(RenderError::NotMeasureAligned { at_sample: e.at_sample });
        }
        if e.at_sample >= total_frames {
            return Err(RenderError::EventOutOfRange {
                at_sample: e.at_sample,
                total_samples: total_frames,
            });
        }
    }
    let mut ordered: Vec<&ScheduleEvent> = events.iter().collect();
    ordered.sort_by_key(|e| e.at_sample);

    let mut beds = Vec::with_capacity(usize::from(BED_COUNT));
    for priority in 1..=BED_COUNT {
        let bed = library.bed(priority).ok_or_else(|| unknown(&format!("bed {priority}")))?;
        beds.push(Placement {
            source: SourceKey::Loop(bed.id.clone()),
            start_frame: 0,
            end_frame: total_frames,
            looped: true,
            envelope: Envelope::unity(),
            pan: 0.0,
        });
    }

    let mut others = Vec::new();
    let mut open: HashMap<String, VecDeque<usize>> = HashMap::new();
    for e in ordered {
        match e.kind {
            EventKind::BedFadeOut | EventKind::BedFadeIn => {
                let bed = payload(&e.bed, e.kind)?;
                let fade = u64::from(payload(&e.fade_measures, e.kind)?) * spm;
                let track = beds
                    .get_mut(usize::from(bed).wrapping_sub(1))
                    .ok_or_else(|| unknown(&format!("bed {bed}")))?;
                let target = if e.kind == EventKind::BedFadeOut { FRAC_PI_2 } else { 0.0 };
                track.envelope.fade(e.at_sample, target, fade);
            }
            EventKind::BellStrike | EventKind::TollStart => {
                let id = payload(&e.loop_id, e.kind)?;
                let station = payload(&e.station, e.kind)?;
                let source = if e.kind == EventKind::BellStrike {
                    SourceKey::Bell(id)
                } else {
                    SourceKey::Tolls(id)
                };
                others.push(Placement {
                    source,
                    start_frame: e.at_sample,
                    end_frame: total_frames,
                    looped: false,
                    envelope: Envelope::unity(),
                    pan: station_pan(station),
                });
            }
            EventKind::CollageStart => {
                let id = payload(&e.loop_id, e.kind)?;
                let lp = library.find_loop(&id).ok_or_else(|| unknown(&id))?;
                let pan = match lp.role {
                    LoopRole::Collage { index } => collage_pan(index),
                    _ => 0.0,
                };
                open.entry(id.clone()).or_default().push_back(others.len());
                others.push(Placement {
                    source: SourceKey::Loop(id),
                    start_frame: e.at_sample,
                    end_frame: total_frames,
                    looped: true,
                    envelope: Envelope::unity(),
                    pan,
                });
            }
            EventKind::CollageEnd => {
                let id = payload(&e.loop_id, e.kind)?;
                let fade = u64::from(e.fade_measures.unwrap_or(1)) * spm;
                if let Some(i) = open.get_mut(&id).and_then(|q| q.pop_front()) {
                    let p = &mut others[i];
                    p.envelope.fade(e.at_sample, FRAC_PI_2, fade);
                    p.end_frame = (e.at_sample + fade).min(total_frames);
                }
            }
        }
    }
    beds.extend(others);
    Ok(MixPlan {
        sample_rate_hz: config.sample_rate_hz(),
        frames_per_chunk: spm,
        total_frames,
        placements: beds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixOutput {
    pub pcm: PcmBuffer,
    /// Output samples (per channel) whose magnitude exceeded full scale.
    pub clipped_samples: u64,
}

impl MixPlan {
    /// Adds every placement into `acc`, which holds interleaved frames
    /// starting at `frame0`.
    fn accumulate(&self, bank: &SourceBank, frame0: u64, acc: &mut [f64]) {
        let frames = (acc.len() / CHANNELS) as u64;
        let frame1 = frame0 + frames;
        for p in &self.placements {
            let audio = bank.get(&p.source).expect("source bank covers the plan");
            let len = audio.len() as u64;
            let end = if p.looped { p.end_frame } else { p.end_frame.min(p.start_frame + len) };
            let (a, b) = (p.start_frame.max(frame0), end.min(frame1));
            if a >= b || len == 0 {
                continue;
            }
            let (gl, gr) = equal_power_pan(p.pan);
            let (gl, gr) = (gl * TRACK_GAIN, gr * TRACK_GAIN);
            let flat = p.envelope.flat_over(a, b);
            if flat.is_some_and(|g| g.abs() < 1e-15) {
                continue;
            }
            let mut src = ((a - p.start_frame) % len) as usize;
            for t in a..b {
                let g = flat.unwrap_or_else(|| p.envelope.gain_at(t));
                let s = f64::from(audio[src]) * g;
                let k = (t - frame0) as usize * CHANNELS;
                acc[k] += s * gl;
                acc[k + 1] += s * gr;
                src += 1;
                if src == audio.len() {
                    src = 0;
                }
            }
        }
    }

    fn chunk_samples(&self) -> usize {
        self.frames_per_chunk.max(1) as usize * CHANNELS
    }

    /// Unclamped mix in double precision.
    pub fn render_raw(&self, bank: &SourceBank, exec: Exec) -> Vec<f64> {
        let mut out = vec![0.0f64; self.total_frames as usize * CHANNELS];
        let chunk = self.chunk_samples();
        exec.for_each_chunk_mut(&mut out, chunk, |i, c| {
            self.accumulate(bank, (i * chunk / CHANNELS) as u64, c);
        });
        out
    }

    /// Clamped mix of frames `frame0..frame0 + frames` only.
    pub fn render_frames(&self, bank: &SourceBank, frame0: u64, frames: u64) -> MixOutput {
        let mut acc = vec![0.0f64; frames as usize * CHANNELS];
        self.accumulate(bank, frame0, &mut acc);
        let clipped = acc.iter().filter(|x| x.abs() > 1.0).count() as u64;
        let samples = acc.into_iter().map(|x| x.clamp(-1.0, 1.0) as f32).collect();
        MixOutput {
            pcm: PcmBuffer::from_interleaved(samples, self.sample_rate_hz).expect("finite mix"),
            clipped_samples: clipped,
        }
    }

    /// Mixes to `f32`, clamping to `[-1, 1]` and counting clipped samples.
    pub fn render(&self, bank: &SourceBank, exec: Exec) -> MixOutput {
        let mut out = vec![0.0f32; self.total_frames as usize * CHANNELS];
        let chunk = self.chunk_samples();
        let clipped = std::sync::atomic::AtomicU64::new(0);
        exec.for_each_chunk_mut(&mut out, chunk, |i, c| {
            let mut acc = vec![0.0f64; c.len()];
            self.accumulate(bank, (i * chunk / CHANNELS) as u64, &mut acc);
            let mut n = 0;
            for (o, x) in c.iter_mut().zip(acc) {
                if x.abs() > 1.0 {
                    n += 1;
                }
                *o = x.clamp(-1.0, 1.0) as f32;
            }
            clipped.fetch_add(n, std::sync::atomic::Ordering::Relaxed);
        });
        MixOutput {
            pcm: PcmBuffer::from_interleaved(out, self.sample_rate_hz).expect("finite mix"),
            clipped_samples: clipped.into_inner(),
        }
    }
}

/// Renders `total_measures` of the session described by `events`.
pub fn mix_session(
    events: &[ScheduleEvent],
    library: &LoopLibrary,
    total_measures: u64,
    config: &TimebaseConfig,
    exec: Exec,
) -> Result<MixOutput, RenderError> {
    let plan = plan_session(events, library, total_measures, config)?;
    let bank = SourceBank::for_plan(&plan, library, config, exec)?;
    Ok(plan.render(&bank, exec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopgen::generate_library;
    use crate::scheduler::{new_state, SchedulerConfig};
    use std::sync::OnceLock;

    fn cfg() -> TimebaseConfig {
        TimebaseConfig::default()
    }

    fn library() -> &'static LoopLibrary {
        static LIB: OnceLock<LoopLibrary> = OnceLock::new();
        LIB.get_or_init(|| generate_library(3, &cfg(), Exec::default()).unwrap())
    }

    #[test]
    fn pan_law() {
        let (l, r) = equal_power_pan(0.0);
        assert!((l - 0.5f64.sqrt()).abs() < 1e-12 && (r - l).abs() < 1e-12);
        for pan in [-1.0, -0.3, 0.5, 1.0] {
            let (l, r) = equal_power_pan(pan);
            assert!((l * l + r * r - 1.0).abs() < 1e-12);
        }
        assert_eq!(collage_pan(1), -0.8);
        assert!((collage_pan(12) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn fade_midpoint_is_equal_power() {
        let mut env = Envelope::unity();
        env.fade(1000, FRAC_PI_2, 2000);
        assert_eq!(env.gain_at(0), 1.0);
        assert!((env.gain_at(2000) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(env.gain_at(3000).abs() < 1e-12);
        let mut back = env.clone();
        back.fade(4000, 0.0, 2000);
        assert!((back.gain_at(5000) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(back.gain_at(6000), 1.0);
    }

    #[test]
    fn interrupted_fade_reverses_from_current_level() {
        let mut env = Envelope::unity();
        env.fade(0, FRAC_PI_2, 1000);
        env.fade(500, 0.0, 1000);
        assert!((env.phase_at(500) - FRAC_PI_2 / 2.0).abs() < 1e-12);
        assert_eq!(env.phase_at(1000), 0.0);
        assert_eq!(env.phase_at(2000), 0.0);
    }

    #[test]
    fn idle_session_repeats_every_bed_cycle() {
        let out = mix_session(&[], library(), 32, &cfg(), Exec::default()).unwrap();
        let half = 16 * 84_000;
        assert_eq!(out.pcm.frames(), 2 * half);
        assert_eq!(out.pcm.slice_frames(0, half), out.pcm.slice_frames(half, 2 * half));
        assert_eq!(out.clipped_samples, 0);
        assert!(out.pcm.peak() > 0.0);
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut state = new_state(SchedulerConfig::new(cfg()).with_lifetime(3)).unwrap();
        state.request_launch(2, 100).unwrap();
        let events = state.advance_to(8 * 84_000);
        let a = mix_session(&events, library(), 8, &cfg(), Exec::Sequential).unwrap();
        let b = mix_session(&events, library(), 8, &cfg(), Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chunk_render_matches_full_render() {
        let mut state = new_state(SchedulerConfig::new(cfg()).with_lifetime(2)).unwrap();
        state.request_launch(1, 0).unwrap();
        let events = state.advance_to(5 * 84_000);
        let plan = plan_session(&events, library(), 5, &cfg()).unwrap();
        let bank = SourceBank::for_library(library(), &cfg(), Exec::default()).unwrap();
        let full = plan.render(&bank, Exec::default());
        for m in 0..5 {
            let chunk = plan.render_frames(&bank, m * 84_000, 84_000);
            assert_eq!(chunk.pcm, full.pcm.slice_frames(m as usize * 84_000, (m as usize + 1) * 84_000));
        }
    }

    #[test]
    fn mix_is_linear_in_tracks() {
        let mut state = new_state(SchedulerConfig::new(cfg()).with_lifetime(2)).unwrap();
        state.request_launch(4, 0).unwrap();
        let events = state.advance_to(6 * 84_000);
        let plan = plan_session(&events, library(), 6, &cfg()).unwrap();
        let bank = SourceBank::for_plan(&plan, library(), &cfg(), Exec::default()).unwrap();
        let whole = plan.render_raw(&bank, Exec::default());
        let (first, rest) = plan.placements.split_at(5);
        let part = |ps: &[Placement]| {
            MixPlan {
                placements: ps.to_vec(),
                ..plan.clone()
            }
            .render_raw(&bank, Exec::default())
        };
        let (a, b) = (part(first), part(rest));
        for i in 0..whole.len() {
            assert!((whole[i] - (a[i] + b[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_events() {
        let ev = |at_sample, loop_id: &str| ScheduleEvent {
            at_sample,
            measure: at_sample / 84_000,
            kind: EventKind::CollageStart,
            station: Some(1),
            loop_id: Some(loop_id.into()),
            bed: None,
            fade_measures: None,
        };
        let lib = library();
        assert!(matches!(
            plan_session(&[ev(84_000, "C99")], lib, 4, &cfg()),
            Err(RenderError::UnknownLoopId(_))
        ));
        assert!(matches!(
            plan_session(&[ev(100, "C01")], lib, 4, &cfg()),
            Err(RenderError::NotMeasureAligned { .. })
        ));
        assert!(matches!(
            plan_session(&[ev(4 * 84_000, "C01")], lib, 4, &cfg()),
            Err(RenderError::EventOutOfRange { .. })
        ));
    }
}
