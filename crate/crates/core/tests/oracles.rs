//! Production paths against the brute-force references.

use std::sync::OnceLock;

use interlock_core::compat::{cycle_measures, overlap_dissonance, CompatSettings};
use interlock_core::loopgen::{generate_library, Loop, LoopLibrary, LoopRole, Timbre};
use interlock_core::music::{NoteEvent, Pattern, Pitch, TimebaseConfig};
use interlock_core::render::mix_session;
use interlock_core::scheduler::{replay, SchedulerConfig};
use interlock_core::Exec;
use interlock_oracle as oracle;
use proptest::prelude::*;

const SPM: u64 = 84_000;

fn library() -> &'static LoopLibrary {
    static LIB: OnceLock<LoopLibrary> = OnceLock::new();
    LIB.get_or_init(|| generate_library(1, &TimebaseConfig::default(), Exec::default()).unwrap())
}

fn mk(id: &str, measures: u32, events: Vec<NoteEvent>) -> Loop {
    Loop {
        id: id.into(),
        role: LoopRole::Collage { index: 1 },
        pattern: Pattern::new(measures, events, 16).unwrap(),
        timbre: Timbre::catalog("marimba").unwrap(),
    }
}

fn arb_loop(id: &'static str) -> impl Strategy<Value = Loop> {
    (1u32..=4).prop_flat_map(move |measures| {
        proptest::collection::vec(
            (0..measures * 16, 1u32..24, proptest::option::weighted(0.8, 50i64..80)),
            0..12,
        )
        .prop_map(move |evs| {
            let events = evs
                .into_iter()
                .map(|(o, d, p)| NoteEvent {
                    onset_pulse: o,
                    duration_pulses: d,
                    pitch: p.map(|n| Pitch::new(n).unwrap()),
                    velocity: 0.6,
                })
                .collect();
            mk(id, measures, events)
        })
    })
}

fn arb_requests(max_measures: u64) -> impl Strategy<Value = Vec<(u8, u64)>> {
    proptest::collection::vec((1u8..=6, 0..max_measures * SPM), 0..40).prop_map(|mut v| {
        v.sort_by_key(|r| r.1);
        v
    })
}

#[test]
fn wrapped_clash_matches_scan() {
    let a = mk("a", 2, vec![NoteEvent::pitched(30, 4, Pitch::from_name("C5").unwrap(), 0.6)]);
    let b = mk("b", 2, vec![NoteEvent::pitched(0, 32, Pitch::from_name("B4").unwrap(), 0.6)]);
    let fast = overlap_dissonance(&a, &b, 0, &CompatSettings::default()).incidents;
    assert_eq!(fast.len(), 1);
    assert_eq!(fast, oracle::compat::brute_force_dissonance(&a, &b, 0, 16, 4));
}

#[test]
fn single_offset_failure_matches_scan() {
    let a = mk("a", 4, vec![NoteEvent::pitched(48, 16, Pitch::from_name("F#4").unwrap(), 0.6)]);
    let b = mk("b", 4, vec![NoteEvent::pitched(0, 16, Pitch::from_name("G4").unwrap(), 0.6)]);
    for o in 0..4 {
        let brute = oracle::compat::brute_force_dissonance(&a, &b, o, 16, 4);
        assert_eq!(brute.is_empty(), o != 3);
        assert_eq!(overlap_dissonance(&a, &b, o, &CompatSettings::default()).incidents, brute);
    }
}

#[test]
fn scheduler_matches_recomputation_on_dense_script() {
    let cfg = SchedulerConfig::default().with_lifetime(5);
    let requests: Vec<(u8, u64)> = (0..40u64).map(|i| ((i * 5 % 6) as u8 + 1, i * SPM / 3)).collect();
    let (_, events, _) = replay(cfg, &requests, 40 * SPM).unwrap();
    assert_eq!(events, oracle::scheduler::simulate(&cfg, &requests, 40 * SPM));
}

#[test]
fn four_measure_mix_matches_track_sum() {
    let tb = TimebaseConfig::default();
    let cfg = SchedulerConfig::new(tb).with_lifetime(1);
    let (_, events, _) = replay(cfg, &[(2, 10), (5, SPM + 7)], 4 * SPM).unwrap();
    assert!(events.iter().any(|e| e.kind == interlock_core::scheduler::EventKind::CollageEnd));
    let got = mix_session(&events, library(), 4, &tb, Exec::default()).unwrap();
    let want = oracle::mix::mix(&events, library(), 4, &tb);
    assert_eq!(got.pcm.samples().len(), want.len());
    let lsb = 1.0 / 32768.0;
    for (i, (&g, &w)) in got.pcm.samples().iter().zip(&want).enumerate() {
        assert!((f64::from(g) - w.clamp(-1.0, 1.0)).abs() <= lsb, "sample {i}: {g} vs {w}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interval_route_matches_pulse_scan(a in arb_loop("a"), b in arb_loop("b"), off in 0u32..12) {
        let off = off % cycle_measures(&a, &b);
        let fast = overlap_dissonance(&a, &b, off, &CompatSettings::default()).incidents;
        prop_assert_eq!(fast, oracle::compat::brute_force_dissonance(&a, &b, off, 16, 4));
    }

    #[test]
    fn scheduler_matches_recomputation(requests in arb_requests(64), life in 1u32..60, end in 1u64..=64) {
        let cfg = SchedulerConfig::default().with_lifetime(life);
        let (_, events, _) = replay(cfg, &requests, end * SPM).unwrap();
        prop_assert_eq!(events, oracle::scheduler::simulate(&cfg, &requests, end * SPM));
    }
}
