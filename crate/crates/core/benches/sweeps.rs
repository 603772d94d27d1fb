//! Parameter sweep throughput: rayon pool against a single worker.
//!
//! `cargo bench -p pacemaker-core` compares both on the current build;
//! `--no-default-features` benchmarks the plain sequential fallback.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pacemaker_core::integrate::{sweep, Budget, SeedPolicy};
use pacemaker_core::model::{DimlessModel, DimlessParams, Vector};
use pacemaker_core::par;

fn sweeps(c: &mut Criterion) {
    let m = DimlessModel::new(DimlessParams::default());
    let budget = Budget { transient: 200.0, observation: 200.0, ..Budget::default() };
    let run = || sweep(&m, "v1b", (-0.3, -0.2), 16, SeedPolicy::Fixed(Vector::<2>::zeros()), &budget).unwrap();

    let mut g = c.benchmark_group("v1b_sweep_16");
    g.sample_size(10);
    let threads = if par::is_parallel() { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { 1 };
    g.bench_function(BenchmarkId::new("pool", threads), |b| b.iter(|| black_box(run())));
    g.bench_function(BenchmarkId::new("single", 1), |b| b.iter(|| black_box(par::with_jobs(1, run))));
    g.finish();
}

criterion_group!(benches, sweeps);
criterion_main!(benches);
