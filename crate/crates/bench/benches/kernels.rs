use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kgz_core::diagnostics::{modulation_fit, orbit_distance};
use kgz_core::evolve::{rhs, rk4_step};
use kgz_core::{assemble_hessian, make_grid, spectrum, translate_rotate, KgzState, SolitonFamily};

fn time_stepping(c: &mut Criterion) {
    let grid = make_grid(60.0, 1024).unwrap();
    let fam = SolitonFamily::new(&grid, 0.8).unwrap();
    let s = KgzState::from_quad(&grid, &fam.scaled_standing_wave(0.01)).unwrap();
    c.bench_function("rhs N=1024", |b| b.iter(|| rhs(&grid, black_box(&s), 1.0, true).unwrap()));
    c.bench_function("rk4 step N=1024", |b| b.iter(|| rk4_step(&grid, black_box(&s), 0.01, 1.0, true).unwrap()));
}

fn linearized_spectrum(c: &mut Criterion) {
    let grid = make_grid(40.0, 128).unwrap();
    let mut g = c.benchmark_group("spectrum");
    g.sample_size(10);
    g.bench_function("assemble + eigensolve N=128", |b| {
        b.iter(|| spectrum(&assemble_hessian(&grid, black_box(0.5), 1.0).unwrap(), 8).unwrap())
    });
    g.finish();
}

fn orbit_tracking(c: &mut Criterion) {
    let grid = make_grid(60.0, 1024).unwrap();
    let omega = 0.7;
    let fam = SolitonFamily::new(&grid, omega).unwrap();
    let q = translate_rotate(&grid, SolitonFamily::new(&grid, 1.01 * omega).unwrap().standing_wave(), 0.4, 1.2);
    c.bench_function("orbit distance N=1024", |b| b.iter(|| orbit_distance(&grid, black_box(&q), &fam).unwrap()));
    let mut g = c.benchmark_group("modulation");
    g.sample_size(20);
    g.bench_function("fit from cold start N=1024", |b| {
        b.iter(|| modulation_fit(&grid, black_box(&q), omega, None).unwrap())
    });
    g.bench_function("fit from nearby guess N=1024", |b| {
        b.iter(|| modulation_fit(&grid, black_box(&q), omega, Some((0.41, 1.19, 1.0))).unwrap())
    });
    g.finish();
}

criterion_group!(benches, time_stepping, linearized_spectrum, orbit_tracking);
criterion_main!(benches);
