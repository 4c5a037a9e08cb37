//! Whole-session mix built one track at a time, sample by sample, from
//! individually rendered sources.

use std::f64::consts::FRAC_PI_2;

use interlock_core::loopgen::{LoopLibrary, LoopRole};
use interlock_core::music::TimebaseConfig;
use interlock_core::render::{render_bell, render_loop, render_tolls, PcmBuffer};
use interlock_core::scheduler::{EventKind, ScheduleEvent};

const GAIN: f64 = 1.0 / 16.0;

fn pan(p: f64) -> (f64, f64) {
    let theta = (p + 1.0) * std::f64::consts::PI / 4.0;
    (theta.cos(), theta.sin())
}

fn collage_pan(index: u8) -> f64 {
    -0.8 + 1.6 * f64::from(index - 1) / 11.0
}

fn mono(pcm: PcmBuffer) -> Vec<f64> {
    pcm.left().map(f64::from).collect()
}

struct Track {
    audio: Vec<f64>,
    start: u64,
    looped: bool,
    pan: f64,
    /// Gain at absolute sample `t`; `None` once the track has stopped.
    gain: Box<dyn Fn(u64) -> Option<f64>>,
}

/// Phase of a bed fader at `t`: walks from the phase it had when the
/// latest fade began toward that fade's target at a quarter-turn per
/// `fade_measures` measures.
fn bed_phase(fades: &[(u64, f64, u64)], t: u64) -> f64 {
    let mut phase = 0.0f64;
    let mut from_t = 0u64;
    let mut target = 0.0f64;
    let mut rate = 0.0f64;
    let at = |phase: f64, from_t: u64, target: f64, rate: f64, t: u64| {
        let moved = rate * (t - from_t) as f64;
        if target > phase {
            (phase + moved).min(target)
        } else {
            (phase - moved).max(target)
        }
    };
    for &(s, tgt, frames) in fades {
        if s > t {
            break;
        }
        phase = at(phase, from_t, target, rate, s);
        from_t = s;
        target = tgt;
        rate = FRAC_PI_2 / frames as f64;
    }
    at(phase, from_t, target, rate, t)
}

/// Interleaved stereo, unclamped.
pub fn mix(
    events: &[ScheduleEvent],
    library: &LoopLibrary,
    total_measures: u64,
    config: &TimebaseConfig,
) -> Vec<f64> {
    let spm = config.samples_per_measure();
    let total = total_measures * spm;
    let mut tracks: Vec<Track> = Vec::new();

    for bed in &library.beds {
        let LoopRole::Bed { priority } = bed.role else { unreachable!() };
        let fades: Vec<(u64, f64, u64)> = events
            .iter()
            .filter(|e| e.bed == Some(priority))
            .map(|e| {
                let target = if e.kind == EventKind::BedFadeOut { FRAC_PI_2 } else { 0.0 };
                (e.at_sample, target, u64::from(e.fade_measures.unwrap()) * spm)
            })
            .collect();
        tracks.push(Track {
            audio: mono(render_loop(bed, config).unwrap()),
            start: 0,
            looped: true,
            pan: 0.0,
            gain: Box::new(move |t| Some(bed_phase(&fades, t).cos())),
        });
    }

    for (i, e) in events.iter().enumerate() {
        let id = e.loop_id.clone().unwrap_or_default();
        let station_pan = |s: u8| (collage_pan(2 * s - 1) + collage_pan(2 * s)) / 2.0;
        match e.kind {
            EventKind::BellStrike | EventKind::TollStart => {
                let ann = library.announcements.iter().find(|a| a.collage_id == id).unwrap();
                let pcm = if e.kind == EventKind::BellStrike {
                    render_bell(ann, config)
                } else {
                    render_tolls(ann, config)
                };
                tracks.push(Track {
                    audio: mono(pcm.unwrap()),
                    start: e.at_sample,
                    looped: false,
                    pan: station_pan(e.station.unwrap()),
                    gain: Box::new(|_| Some(1.0)),
                });
            }
            EventKind::CollageStart => {
                let lp = library.find_loop(&id).unwrap();
                let LoopRole::Collage { index } = lp.role else { unreachable!() };
                let end = events[i..]
                    .iter()
                    .find(|x| x.kind == EventKind::CollageEnd && x.loop_id.as_deref() == Some(&id))
                    .map(|x| (x.at_sample, u64::from(x.fade_measures.unwrap()) * spm));
                tracks.push(Track {
                    audio: mono(render_loop(lp, config).unwrap()),
                    start: e.at_sample,
                    looped: true,
                    pan: collage_pan(index),
                    gain: Box::new(move |t| match end {
                        Some((s, f)) if t >= s + f => None,
                        Some((s, f)) if t >= s => Some((FRAC_PI_2 * (t - s) as f64 / f as f64).cos()),
                        _ => Some(1.0),
                    }),
                });
            }
            _ => {}
        }
    }

    let mut out = vec![0.0f64; total as usize * 2];
    for tr in &tracks {
        let (l, r) = pan(tr.pan);
        for t in tr.start..total {
            let k = (t - tr.start) as usize;
            let x = if tr.looped {
                tr.audio[k % tr.audio.len()]
            } else if k < tr.audio.len() {
                tr.audio[k]
            } else {
                break;
            };
            let Some(g) = (tr.gain)(t) else { break };
            out[2 * t as usize] += x * g * GAIN * l;
            out[2 * t as usize + 1] += x * g * GAIN * r;
        }
    }
    out
}
