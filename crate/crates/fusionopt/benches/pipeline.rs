//! Stage-by-stage benchmarks of the solver pipeline. Every measurement is
//! tagged with the execution mode so that `cargo bench -p fusionopt`
//! (parallel) and `cargo bench -p fusionopt --no-default-features`
//! (sequential) land side by side in the criterion report.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fusionopt::approx::{derandomize, local_search};
use fusionopt::exact::{brute_force, solve_bnb, BnbConfig};
use fusionopt::instance::gen_random;
use fusionopt::relax::{compute_bounds, frank_wolfe, Formulation, FwOptions};

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

fn bench_bounds(c: &mut Criterion) {
    let inst = gen_random(8, 40, 12, 1).unwrap();
    let opts = FwOptions { max_iters: 300, tol: 1e-6 };
    let mut g = c.benchmark_group("bounds");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("three_formulations", mode()), |b| {
        b.iter(|| black_box(compute_bounds(&inst, &opts).unwrap()))
    });
    g.finish();
}

fn bench_local_search(c: &mut Criterion) {
    let inst = gen_random(10, 80, 25, 2).unwrap();
    let mut g = c.benchmark_group("local_search");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("n80_s25", mode()), |b| {
        b.iter(|| black_box(local_search(&inst, None).unwrap()))
    });
    g.finish();
}

fn bench_brute_force(c: &mut Criterion) {
    let inst = gen_random(5, 16, 8, 3).unwrap();
    let mut g = c.benchmark_group("brute_force");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("n16_s8", mode()), |b| {
        b.iter(|| black_box(brute_force(&inst).unwrap()))
    });
    g.finish();
}

fn bench_derandomize(c: &mut Criterion) {
    let inst = gen_random(8, 40, 12, 4).unwrap();
    let opts = FwOptions { max_iters: 300, tol: 1e-6 };
    let (point, _) = frank_wolfe(&inst, Formulation::M, &[], &[], &opts, None).unwrap();
    let mut g = c.benchmark_group("derandomize");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("n40_s12", mode()), |b| {
        b.iter(|| black_box(derandomize(&inst, &point).unwrap()))
    });
    g.finish();
}

fn bench_solve(c: &mut Criterion) {
    let inst = gen_random(4, 13, 6, 5).unwrap();
    let cfg = BnbConfig::default();
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("n13_s6", mode()), |b| {
        b.iter(|| black_box(solve_bnb(&inst, &cfg).unwrap()))
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_bounds,
    bench_local_search,
    bench_brute_force,
    bench_derandomize,
    bench_solve
);
criterion_main!(benches);
