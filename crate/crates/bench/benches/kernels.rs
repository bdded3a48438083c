use criterion::{black_box, criterion_group, criterion_main, Criterion};

use shl_bench::{bump_density, convex_field, matrix};
use shl_core::capacity::{self, CapacityProblem, SolverParams};
use shl_core::hessmeasure::hessian_measure;
use shl_core::potential::newton_convolve;
use shl_core::superalgebra::{sigma_pairing, sigma_pairing_generic};
use shl_core::{Current, Grid, HessOptions};

fn algebra(c: &mut Criterion) {
    let a = matrix(4);
    c.bench_function("sigma_pairing n=4 j=2", |b| b.iter(|| sigma_pairing(black_box(&a), 2).unwrap()));
    c.bench_function("sigma_pairing_generic n=4 j=2", |b| b.iter(|| sigma_pairing_generic(black_box(&a), 2).unwrap()));
}

fn measure(c: &mut Criterion) {
    let u = convex_field(3, 33);
    let t = Current::unit(&u.grid);
    let opts = HessOptions::default();
    c.bench_function("hessian_measure 33^3 m=2", |b| b.iter(|| hessian_measure(&t, 2, &[u.clone(), u.clone()], &opts).unwrap()));
}

fn potential(c: &mut Criterion) {
    let g = Grid::cube(3, 17, 1.0).unwrap();
    let rho = bump_density(&g, 0.6);
    c.bench_function("newton_convolve 17^3", |b| b.iter(|| newton_convolve(&g, black_box(&rho)).unwrap()));
}

fn solver(c: &mut Criterion) {
    let g = Grid::cube(3, 16, 1.0).unwrap();
    let p = CapacityProblem::ball_in_ball(&g, &[0.0; 3], 0.3, 0.95, 1, None, SolverParams::default()).unwrap();
    let mut group = c.benchmark_group("capacity");
    group.sample_size(10);
    group.bench_function("weighted_extremal 16^3 m=1", |b| b.iter(|| capacity::weighted_extremal(&p).unwrap()));
    group.finish();
}

criterion_group!(benches, algebra, measure, potential, solver);
criterion_main!(benches);
