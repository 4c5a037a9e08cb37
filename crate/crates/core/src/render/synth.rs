//! Additive/noise percussion synthesis standing in for recorded samples.
//!
//! A note is a sum of exponentially decaying sine partials mixed with
//! low-passed noise, shaped by a short linear attack and a raised-cosine
//! release. Partial amplitudes are normalized so the peak never exceeds
//! the note velocity.

use std::f64::consts::{PI, TAU};

use crate::loopgen::{AnnouncementSpec, Loop, Timbre, TimbreFamily};
use crate::music::{NoteEvent, Pitch, TimebaseConfig};

use super::{PcmBuffer, RenderError};

const ATTACK_S: f64 = 0.0015;
const RELEASE_S: f64 = 0.05;
/// ln(1000): amplitude falls 60 dB over `decay_s`.
const SIXTY_DB: f64 = 6.907_755_278_982_137;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partial {
    pub freq_hz: f64,
    pub amplitude: f64,
    /// 60 dB decay time of this partial, seconds.
    pub decay_s: f64,
}

const BELL_RATIOS: [f64; 7] = [1.0, 1.183, 1.506, 2.0, 2.514, 2.662, 3.011];
const BELL_WEIGHTS: [f64; 7] = [1.0, 0.6, 0.35, 0.5, 0.25, 0.2, 0.15];

/// Partial set for a timbre; the first entry is the fundamental (or the
/// resonant body mode for unpitched percussion).
pub fn partials(timbre: &Timbre, pitch: Option<Pitch>) -> Vec<Partial> {
    match timbre.family {
        TimbreFamily::PitchedMallet => {
            let f0 = pitch.expect("pitched").frequency_hz();
            (1..=5)
                .map(|k| {
                    let k = f64::from(k);
                    Partial {
                        freq_hz: f0 * k.powf(1.0 + 0.5 * timbre.inharmonicity),
                        amplitude: timbre.brightness.powf(k - 1.0) / k,
                        decay_s: timbre.decay_s / k,
                    }
                })
                .collect()
        }
        TimbreFamily::Bell => {
            let f0 = pitch.expect("pitched").frequency_hz();
            BELL_RATIOS
                .iter()
                .zip(BELL_WEIGHTS)
                .enumerate()
                .map(|(i, (&r, w))| Partial {
                    freq_hz: f0 * (1.0 + (r - 1.0) * (1.0 + 0.15 * timbre.inharmonicity)),
                    amplitude: if i == 0 { w } else { w * (0.4 + 0.6 * timbre.brightness) },
                    decay_s: timbre.decay_s / (1.0 + 0.4 * i as f64),
                })
                .collect()
        }
        TimbreFamily::UnpitchedPercussion => {
            let body = 150.0 * 40f64.powf(timbre.brightness);
            vec![
                Partial {
                    freq_hz: body,
                    amplitude: 1.0,
                    decay_s: timbre.decay_s,
                },
                Partial {
                    freq_hz: body * (1.5 + timbre.inharmonicity),
                    amplitude: 0.5,
                    decay_s: timbre.decay_s * 0.6,
                },
            ]
        }
    }
}

fn check_pitch(timbre: &Timbre, pitch: Option<Pitch>) -> Result<(), RenderError> {
    match (timbre.family.is_pitched(), pitch) {
        (true, None) => Err(RenderError::PitchRequired(timbre.id.clone())),
        (false, Some(_)) => Err(RenderError::PitchForbidden(timbre.id.clone())),
        _ => Ok(()),
    }
}

fn noise_seed(timbre: &Timbre, pitch: Option<Pitch>, duration_pulses: u32) -> u64 {
    // FNV-1a over the identifying fields.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let bytes = timbre
        .id
        .bytes()
        .chain(pitch.map_or(255, |p| p.note_number()).to_le_bytes())
        .chain(duration_pulses.to_le_bytes());
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h | 1
}

/// Mono rendering of one note; length is the sounding time plus release.
pub(crate) fn synth_mono(
    timbre: &Timbre,
    pitch: Option<Pitch>,
    duration_pulses: u32,
    velocity: f64,
    config: &TimebaseConfig,
) -> Result<Vec<f32>, RenderError> {
    check_pitch(timbre, pitch)?;
    let rate = f64::from(config.sample_rate_hz());
    let held = u64::from(duration_pulses) * config.samples_per_pulse();
    let release = (RELEASE_S * rate).round() as u64;
    let ring = (timbre.decay_s * rate).ceil() as u64;
    let len = (held + release).min(ring.max(release * 2)) as usize;
    if velocity <= 0.0 {
        return Ok(vec![0.0; len]);
    }
    let release_start = len.saturating_sub(release as usize).min(held as usize);
    let release_len = (len - 1).saturating_sub(release_start).max(1) as f64;
    let attack = (ATTACK_S * rate).max(1.0);

    let nyquist = rate / 2.0;
    let parts: Vec<Partial> = partials(timbre, pitch)
        .into_iter()
        .filter(|p| p.freq_hz < nyquist)
        .collect();
    let norm: f64 = parts.iter().map(|p| p.amplitude).sum::<f64>().max(f64::MIN_POSITIVE);
    let tonal_mix = 1.0 - timbre.noise_fraction;
    let smoothing = 0.05 + 0.9 * timbre.brightness;
    let mut state = noise_seed(timbre, pitch, duration_pulses);
    let mut lowpassed = 0.0f64;

    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / rate;
        let mut tonal = 0.0;
        for p in &parts {
            tonal += p.amplitude * (-SIXTY_DB * t / p.decay_s).exp() * (TAU * p.freq_hz * t).sin();
        }
        tonal /= norm;
        // xorshift64* white noise in [-1, 1), then one-pole low-pass.
        state ^= state >> 12;
        state ^= state << 25;
        state ^= state >> 27;
        let white = (state.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 11) as f64 / (1u64 << 52) as f64 - 1.0;
        lowpassed += smoothing * (white - lowpassed);
        let noise = lowpassed * (-SIXTY_DB * t / timbre.decay_s).exp();

        let mut env = (n as f64 / attack).min(1.0);
        if n >= release_start {
            let x = (n - release_start) as f64 / release_len;
            env *= 0.5 * (1.0 + (PI * x).cos());
        }
        out.push((velocity * env * (tonal_mix * tonal + timbre.noise_fraction * noise)) as f32);
    }
    Ok(out)
}

/// Deterministic stereo rendering of a single note.
pub fn synth_note(
    timbre: &Timbre,
    pitch: Option<Pitch>,
    duration_pulses: u32,
    velocity: f64,
    config: &TimebaseConfig,
) -> Result<PcmBuffer, RenderError> {
    let mono = synth_mono(timbre, pitch, duration_pulses, velocity, config)?;
    Ok(PcmBuffer::from_mono(&mono, config.sample_rate_hz()))
}

fn add_events(
    out: &mut [f32],
    events: &[NoteEvent],
    timbre: &Timbre,
    config: &TimebaseConfig,
    wrap: bool,
) -> Result<(), RenderError> {
    let spp = config.samples_per_pulse() as usize;
    let len = out.len();
    for e in events {
        let note = synth_mono(timbre, e.pitch, e.duration_pulses, e.velocity, config)?;
        let start = e.onset_pulse as usize * spp;
        for (k, s) in note.into_iter().enumerate() {
            let at = start + k;
            if wrap {
                out[at % len] += s;
            } else if at < len {
                out[at] += s;
            }
        }
    }
    Ok(())
}

/// Mono loop audio of exactly `length_measures` measures; note tails that
/// run past the end wrap to the start.
pub(crate) fn render_loop_mono(lp: &Loop, config: &TimebaseConfig) -> Result<Vec<f32>, RenderError> {
    let frames = lp.pattern.length_measures() as usize * config.samples_per_measure() as usize;
    let mut out = vec![0.0f32; frames];
    add_events(&mut out, lp.pattern.events(), &lp.timbre, config, true)?;
    Ok(out)
}

pub fn render_loop(lp: &Loop, config: &TimebaseConfig) -> Result<PcmBuffer, RenderError> {
    Ok(PcmBuffer::from_mono(&render_loop_mono(lp, config)?, config.sample_rate_hz()))
}

/// One-shot length: every tail kept, rounded up to whole measures.
fn one_shot_frames(tail_end: usize, config: &TimebaseConfig) -> usize {
    let spm = config.samples_per_measure() as usize;
    tail_end.div_ceil(spm).max(1) * spm
}

fn one_shot(events: &[NoteEvent], timbre: &Timbre, config: &TimebaseConfig) -> Result<Vec<f32>, RenderError> {
    let spp = config.samples_per_pulse() as usize;
    let mut tail_end = 0;
    for e in events {
        let n = synth_mono(timbre, e.pitch, e.duration_pulses, 0.0, config)?.len();
        tail_end = tail_end.max(e.onset_pulse as usize * spp + n);
    }
    let mut out = vec![0.0f32; one_shot_frames(tail_end, config)];
    add_events(&mut out, events, timbre, config, false)?;
    Ok(out)
}

fn bell_event(ann: &AnnouncementSpec, config: &TimebaseConfig) -> NoteEvent {
    NoteEvent::pitched(0, config.pulses_per_measure(), ann.bell_pitch, 1.0)
}

pub(crate) fn render_bell_mono(ann: &AnnouncementSpec, config: &TimebaseConfig) -> Result<Vec<f32>, RenderError> {
    one_shot(&[bell_event(ann, config)], &ann.bell_timbre, config)
}

pub(crate) fn render_tolls_mono(ann: &AnnouncementSpec, config: &TimebaseConfig) -> Result<Vec<f32>, RenderError> {
    one_shot(ann.toll_pattern.events(), &ann.toll_timbre, config)
}

/// The station bell strike alone.
pub fn render_bell(ann: &AnnouncementSpec, config: &TimebaseConfig) -> Result<PcmBuffer, RenderError> {
    Ok(PcmBuffer::from_mono(&render_bell_mono(ann, config)?, config.sample_rate_hz()))
}

/// The bar of tolls alone.
pub fn render_tolls(ann: &AnnouncementSpec, config: &TimebaseConfig) -> Result<PcmBuffer, RenderError> {
    Ok(PcmBuffer::from_mono(&render_tolls_mono(ann, config)?, config.sample_rate_hz()))
}

/// Bell strike plus tolls, as written to the announcement WAV files.
pub fn render_announcement(ann: &AnnouncementSpec, config: &TimebaseConfig) -> Result<PcmBuffer, RenderError> {
    let bell = render_bell_mono(ann, config)?;
    let tolls = render_tolls_mono(ann, config)?;
    let mut out = vec![0.0f32; bell.len().max(tolls.len())];
    for (i, s) in bell.iter().enumerate() {
        out[i] += s;
    }
    for (i, s) in tolls.iter().enumerate() {
        out[i] += s;
    }
    Ok(PcmBuffer::from_mono(&out, config.sample_rate_hz()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Exec;
    use crate::loopgen::{generate_bed, generate_collage, generate_library};

    fn cfg() -> TimebaseConfig {
        TimebaseConfig::default()
    }

    fn timbre(id: &str) -> Timbre {
        Timbre::catalog(id).unwrap()
    }

    /// Goertzel power of `freq` over `signal`.
    fn power_at(signal: &[f32], freq: f64, rate: f64) -> f64 {
        let w = TAU * freq / rate;
        let coeff = 2.0 * w.cos();
        let (mut s1, mut s2) = (0.0f64, 0.0f64);
        for &x in signal {
            let s = f64::from(x) + coeff * s1 - s2;
            s2 = s1;
            s1 = s;
        }
        s1 * s1 + s2 * s2 - coeff * s1 * s2
    }

    #[test]
    fn bell_a4_fundamental_is_440() {
        let a4 = Pitch::new(69).unwrap();
        let bell = timbre("station-bell");
        assert_eq!(partials(&bell, Some(a4))[0].freq_hz, 440.0);
        let note = synth_note(&bell, Some(a4), 16, 1.0, &cfg()).unwrap();
        let mono: Vec<f32> = note.left().collect();
        let at_440 = power_at(&mono, 440.0, 44_100.0);
        for off in [220.0, 330.0, 400.0, 480.0] {
            assert!(at_440 > 20.0 * power_at(&mono, off, 44_100.0), "{off}");
        }
        // No energy below the fundamental.
        assert!(at_440 > 100.0 * power_at(&mono, 110.0, 44_100.0));
    }

    #[test]
    fn silence_at_zero_velocity() {
        let note = synth_note(&timbre("marimba"), Some(Pitch::new(67).unwrap()), 4, 0.0, &cfg()).unwrap();
        assert!(note.frames() > 0);
        assert!(note.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn deterministic_and_bounded() {
        for id in ["clave", "cymbal", "rainstick", "marimba", "crotales", "hand-bells"] {
            let t = timbre(id);
            let pitch = t.family.is_pitched().then(|| Pitch::new(72).unwrap());
            for vel in [0.6, 1.0] {
                let a = synth_note(&t, pitch, 8, vel, &cfg()).unwrap();
                let b = synth_note(&t, pitch, 8, vel, &cfg()).unwrap();
                assert_eq!(a, b);
                assert!(a.peak() <= vel as f32, "{id} peak {} > {vel}", a.peak());
                assert!(a.peak() > 0.01, "{id} is silent");
                assert_eq!(*a.samples().last().unwrap(), 0.0, "{id} does not release to zero");
            }
        }
    }

    #[test]
    fn pitch_family_errors() {
        assert!(matches!(
            synth_note(&timbre("vibraphone"), None, 4, 1.0, &cfg()),
            Err(RenderError::PitchRequired(_))
        ));
        assert!(matches!(
            synth_note(&timbre("shaker"), Some(Pitch::new(60).unwrap()), 4, 1.0, &cfg()),
            Err(RenderError::PitchForbidden(_))
        ));
    }

    #[test]
    fn loop_lengths_are_exact() {
        let bed = generate_bed(4, 1, &cfg()).unwrap();
        assert_eq!(render_loop(&bed, &cfg()).unwrap().frames(), 16 * 84_000);
        let collage = generate_collage(6, 1, &cfg()).unwrap();
        assert_eq!(render_loop(&collage, &cfg()).unwrap().frames(), 672_000);
    }

    #[test]
    fn loops_are_seamless() {
        let lib = generate_library(1, &cfg(), Exec::default()).unwrap();
        for lp in lib.beds.iter().chain(&lib.collages) {
            let mono: Vec<f32> = render_loop(lp, &cfg()).unwrap().left().collect();
            let inner = mono.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0f32, f32::max);
            let seam = (mono[0] - mono[mono.len() - 1]).abs();
            assert!(seam <= inner, "{}: seam {seam} > inner {inner}", lp.id);
        }
    }

    #[test]
    fn tails_wrap_to_the_start() {
        let bed = generate_bed(4, 1, &cfg()).unwrap(); // rainstick, long notes
        let mut lp = bed.clone();
        lp.pattern = crate::music::Pattern::new(
            16,
            vec![NoteEvent::unpitched(16 * 16 - 1, 24, 1.0)],
            16,
        )
        .unwrap();
        let mono: Vec<f32> = render_loop(&lp, &cfg()).unwrap().left().collect();
        assert!(mono[..20_000].iter().any(|s| s.abs() > 1e-4));
    }

    #[test]
    fn announcement_shapes() {
        let lib = generate_library(1, &cfg(), Exec::default()).unwrap();
        let ann = &lib.announcements[0];
        let bell = render_bell(ann, &cfg()).unwrap();
        let tolls = render_tolls(ann, &cfg()).unwrap();
        let all = render_announcement(ann, &cfg()).unwrap();
        assert_eq!(bell.frames() % 84_000, 0);
        assert_eq!(all.frames(), bell.frames().max(tolls.frames()));
        assert!(tolls.frames() <= 2 * 84_000);
    }
}
