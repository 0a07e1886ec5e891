//! Sequential versus pooled execution of a short sweep and of equilibrium
//! enumeration. Build with `--no-default-features` to time the fallback path
//! for every entry.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cheaptalk::equilibria::enumerate_with_report;
use cheaptalk::sweep::{run_sweep, SweepConfig};
use cheaptalk::{GameSpec, SimConfig};

fn short_sweep(workers: Option<usize>) -> SweepConfig {
    SweepConfig {
        sim: SimConfig {
            max_periods: 60_000,
            window: 2_000,
            ..SimConfig::default()
        },
        bias_grid: vec![0.05, 0.2],
        lambda_grid: vec![5e-4],
        n_replications: 16,
        workers,
        ..SweepConfig::default()
    }
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (label, workers) in [("sequential", Some(1)), ("parallel", None)] {
        let cfg = short_sweep(workers);
        group.bench_with_input(BenchmarkId::from_parameter(label), &cfg, |b, cfg| {
            b.iter(|| run_sweep(cfg).unwrap())
        });
    }
    group.finish();
}

fn enumeration(c: &mut Criterion) {
    let mut group = c.benchmark_group("enumerate_n12");
    let spec = GameSpec::baseline(12, 0.02).unwrap();
    for (label, workers) in [("sequential", Some(1)), ("parallel", None)] {
        group.bench_with_input(
            BenchmarkId::from_parameter(label),
            &workers,
            |b, &workers| b.iter(|| enumerate_with_report(&spec, workers)),
        );
    }
    group.finish();
}

criterion_group!(benches, sweep, enumeration);
criterion_main!(benches);
