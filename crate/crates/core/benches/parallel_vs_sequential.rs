use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use interlock_core::compat::check_library;
use interlock_core::loopgen::{generate_library, DEFAULT_SEED};
use interlock_core::music::TimebaseConfig;
use interlock_core::render::mix_session;
use interlock_core::scheduler::{replay, SchedulerConfig};
use interlock_core::Exec;

const SPM: u64 = 84_000;

fn strategies() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn bench(c: &mut Criterion) {
    let tb = TimebaseConfig::default();
    let lib = generate_library(DEFAULT_SEED, &tb, Exec::default()).unwrap();

    let mut group = c.benchmark_group("check_library");
    for (name, exec) in strategies() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| check_library(&lib, exec))
        });
    }
    group.finish();

    let measures = 16;
    let requests: Vec<(u8, u64)> = (0..12u64).map(|i| ((i % 6) as u8 + 1, i * SPM / 2)).collect();
    let (_, events, _) = replay(SchedulerConfig::new(tb), &requests, measures * SPM).unwrap();
    let mut group = c.benchmark_group("mix_session_16_measures");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| mix_session(&events, &lib, measures, &tb, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
