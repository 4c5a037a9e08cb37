//! Per-pulse scan over the whole cycle. Shares nothing with the
//! interval-merging path in `interlock_core::compat`.

use std::collections::BTreeSet;

use interlock_core::compat::DissonanceIncident;
use interlock_core::loopgen::Loop;
use interlock_core::music::Pitch;

fn sounding_grid(lp: &Loop, shift: u32, cycle: u32, ppm: u32) -> Vec<BTreeSet<Pitch>> {
    let mut grid = vec![BTreeSet::new(); cycle as usize];
    let len = lp.pattern.length_measures() * ppm;
    let mut rep_start = 0;
    while rep_start < cycle {
        for e in lp.pattern.events() {
            if let Some(p) = e.pitch {
                for k in 0..e.duration_pulses.min(cycle) {
                    let pulse = (rep_start + e.onset_pulse + shift + k) % cycle;
                    grid[pulse as usize].insert(p);
                }
            }
        }
        rep_start += len;
    }
    grid
}

pub fn brute_force_dissonance(
    a: &Loop,
    b: &Loop,
    offset: u32,
    ppm: u32,
    threshold: u32,
) -> Vec<DissonanceIncident> {
    let la = a.pattern.length_measures();
    let lb = b.pattern.length_measures();
    let mut cycle_m = la.max(lb);
    while !cycle_m.is_multiple_of(la) || !cycle_m.is_multiple_of(lb) {
        cycle_m += 1;
    }
    let cycle = cycle_m * ppm;
    let ga = sounding_grid(a, 0, cycle, ppm);
    let gb = sounding_grid(b, offset * ppm, cycle, ppm);
    let mut pairs = BTreeSet::new();
    for p in 0..cycle as usize {
        for &x in &ga[p] {
            for &y in &gb[p] {
                let d = (i32::from(x.note_number()) - i32::from(y.note_number())).abs() % 12;
                let ic = d.min(12 - d);
                if ic == 1 || ic == 6 {
                    pairs.insert((x, y, ic as u8));
                }
            }
        }
    }
    let mut out = Vec::new();
    for (x, y, ic) in pairs {
        let on: Vec<bool> = (0..cycle as usize)
            .map(|p| ga[p].contains(&x) && gb[p].contains(&y))
            .collect();
        if on.iter().all(|&v| v) {
            if cycle >= threshold {
                out.push(DissonanceIncident {
                    start_pulse: 0,
                    duration_pulses: cycle,
                    pitch_a: x,
                    pitch_b: y,
                    interval_class: ic,
                });
            }
            continue;
        }
        // Start scanning just after an off pulse so runs never straddle
        // the scan origin.
        let origin = on.iter().position(|&v| !v).unwrap();
        let mut run: Option<(usize, u32)> = None;
        for step in 1..=cycle as usize {
            let p = (origin + step) % cycle as usize;
            if on[p] {
                run = Some(match run {
                    Some((s, n)) => (s, n + 1),
                    None => (p, 1),
                });
            } else if let Some((s, n)) = run.take() {
                if n >= threshold {
                    out.push(DissonanceIncident {
                        start_pulse: s as u32,
                        duration_pulses: n,
                        pitch_a: x,
                        pitch_b: y,
                        interval_class: ic,
                    });
                }
            }
        }
    }
    out.sort();
    out
}
