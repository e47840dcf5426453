use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wide_bench::{mesh, nonlinear_params, sine_data, smooth_trajectory};
use wide_core::minimizer::minimize_wide;
use wide_core::potentials::prox_elliptic;
use wide_core::reference::solve_hyperbolic;
use wide_core::wide::{eval_wide, grad_wide, hess_vec};
use wide_core::{Field, NewtonOptions};

fn functional(c: &mut Criterion) {
    let params = nonlinear_params();
    let mut group = c.benchmark_group("functional");
    for n in [32, 64] {
        let (grid, time) = mesh(1, n, 128);
        let traj = smooth_trajectory(grid, time);
        let dir: Vec<Field> = traj.levels[2..].to_vec();
        group.bench_with_input(BenchmarkId::new("eval", n), &traj, |b, t| {
            b.iter(|| eval_wide(black_box(t), &params).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("gradient", n), &traj, |b, t| {
            b.iter(|| grad_wide(black_box(t), &params).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("hess_vec", n), &traj, |b, t| {
            b.iter(|| hess_vec(black_box(t), &dir, &params).unwrap())
        });
    }
    group.finish();
}

fn minimize(c: &mut Criterion) {
    let params = nonlinear_params();
    let opts = NewtonOptions {
        grad_tol: 1e-8,
        ..NewtonOptions::default()
    };
    let mut group = c.benchmark_group("minimize_wide");
    group.sample_size(10);
    for (dim, n, steps) in [(1, 32, 64), (1, 64, 128), (2, 16, 32)] {
        let (grid, time) = mesh(dim, n, steps);
        let u0 = sine_data(&grid);
        let u1 = grid.zeros();
        group.bench_function(format!("{dim}d_n{n}_N{steps}"), |b| {
            b.iter(|| minimize_wide(&params, grid, time, &u0, &u1, &opts).unwrap())
        });
    }
    group.finish();
}

fn steppers(c: &mut Criterion) {
    let params = nonlinear_params();
    let (grid, time) = mesh(1, 64, 256);
    let u0 = sine_data(&grid);
    let u1 = grid.zeros();
    c.bench_function("solve_hyperbolic_n64_N256", |b| {
        b.iter(|| solve_hyperbolic(&params, &grid, &time, black_box(&u0), &u1).unwrap())
    });
    let (grid2, _) = mesh(2, 32, 2);
    let u = sine_data(&grid2);
    c.bench_function("prox_elliptic_2d_n32", |b| {
        b.iter(|| prox_elliptic(&params.f_spec, &grid2, black_box(&u), 0.1).unwrap())
    });
}

criterion_group!(benches, functional, minimize, steppers);
criterion_main!(benches);
