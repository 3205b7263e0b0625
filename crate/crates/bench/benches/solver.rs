use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use parabolic_bench::{checkerboard_problem, unit_grid};
use parabolic_core::kernel::{KernelOptions, KernelPropagator};
use parabolic_core::solver::solve;
use parabolic_core::{LinearCoefficients, SolverConfig, SpaceTimeGrid};
use std::hint::black_box;

fn solve_1d(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_1d_heat");
    for cells in [128usize, 256, 512] {
        let spec = checkerboard_problem(&unit_grid(1, cells, 64), 1.0);
        group.bench_with_input(BenchmarkId::from_parameter(cells), &spec, |b, spec| {
            b.iter(|| solve(black_box(spec), &SolverConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn solve_2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_2d_checkerboard");
    group.sample_size(10);
    for contrast in [1.0, 100.0] {
        let spec = checkerboard_problem(&unit_grid(2, 64, 16), contrast);
        group.bench_with_input(BenchmarkId::from_parameter(contrast), &spec, |b, spec| {
            b.iter(|| solve(black_box(spec), &SolverConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn kernel_1d(c: &mut Criterion) {
    let h = 1.0 / 64.0;
    let grid = SpaceTimeGrid::new(1, &[(-2.0 - h / 2.0, 2.0 + h / 2.0)], h, 0.0625, h * h).unwrap();
    let lc = LinearCoefficients::heat(&grid, 1.0);
    let opts = KernelOptions {
        tail_tol: f64::MAX,
        ..KernelOptions::default()
    };
    let prop = KernelPropagator::new(&lc, &opts).unwrap();
    c.bench_function("kernel_1d_heat", |b| b.iter(|| prop.kernel(black_box(&[0.0]), 0.0).unwrap()));
}

criterion_group!(benches, solve_1d, solve_2d, kernel_1d);
criterion_main!(benches);
