//! Scheduler recomputed from the request list alone: acceptance is
//! decided up front, then every measure's events are derived from the
//! accepted set without any incremental state.

use interlock_core::loopgen::collage_id;
use interlock_core::scheduler::{EventKind, ScheduleEvent, SchedulerConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accepted {
    pub station: u8,
    pub loop_id: String,
    pub announce: u64,
    pub end: u64,
}

/// Which requests the capacity rules admit, in request order.
pub fn accept(config: &SchedulerConfig, requests: &[(u8, u64)]) -> Vec<Accepted> {
    let spm = config.timebase.samples_per_measure();
    let life = u64::from(config.lifetime_measures);
    let mut accepted: Vec<Accepted> = Vec::new();
    for &(station, t) in requests {
        let live: Vec<&Accepted> = accepted.iter().filter(|a| a.end * spm > t).collect();
        if live.len() >= 12 {
            continue;
        }
        let used: Vec<u8> = live
            .iter()
            .filter(|a| a.station == station)
            .map(|a| if a.loop_id == collage_id(2 * station - 1) { 1 } else { 2 })
            .collect();
        let Some(slot) = [1u8, 2].into_iter().find(|s| !used.contains(s)) else {
            continue;
        };
        let announce = t / spm + 1;
        accepted.push(Accepted {
            station,
            loop_id: collage_id(2 * (station - 1) + slot),
            announce,
            end: announce + 1 + life,
        });
    }
    accepted
}

pub fn simulate(
    config: &SchedulerConfig,
    requests: &[(u8, u64)],
    end_sample: u64,
) -> Vec<ScheduleEvent> {
    let spm = config.timebase.samples_per_measure();
    let accepted = accept(config, requests);
    let mut out = Vec::new();
    let mut prev_beds = 6u8;
    let last = if end_sample == 0 { 0 } else { (end_sample - 1) / spm + 1 };
    for m in 0..last {
        let at_sample = m * spm;
        let ev = |kind, station, loop_id: Option<&str>, bed, fade| ScheduleEvent {
            at_sample,
            measure: m,
            kind,
            station,
            loop_id: loop_id.map(String::from),
            bed,
            fade_measures: fade,
        };
        for a in accepted.iter().filter(|a| a.end == m) {
            out.push(ev(EventKind::CollageEnd, Some(a.station), Some(&a.loop_id), None, Some(config.collage_fade_measures)));
        }
        let n = accepted.iter().filter(|a| a.announce <= m && m < a.end).count();
        let beds = 6 - n.min(6) as u8;
        for b in (beds + 1..=prev_beds).rev() {
            out.push(ev(EventKind::BedFadeOut, None, None, Some(b), Some(config.bed_fade_measures)));
        }
        for b in prev_beds + 1..=beds {
            out.push(ev(EventKind::BedFadeIn, None, None, Some(b), Some(config.bed_fade_measures)));
        }
        prev_beds = beds;
        for a in accepted.iter().filter(|a| a.announce == m) {
            out.push(ev(EventKind::BellStrike, Some(a.station), Some(&a.loop_id), None, None));
        }
        for a in accepted.iter().filter(|a| a.announce == m) {
            out.push(ev(EventKind::TollStart, Some(a.station), Some(&a.loop_id), None, None));
        }
        for a in accepted.iter().filter(|a| a.announce + 1 == m) {
            out.push(ev(EventKind::CollageStart, Some(a.station), Some(&a.loop_id), None, None));
        }
    }
    out
}
