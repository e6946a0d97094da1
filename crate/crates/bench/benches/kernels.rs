use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use morrey_sde::chaos::iterated_ito;
use morrey_sde::coeffs::morrey_hat;
use morrey_sde::pde::solve_backward;
use morrey_sde_bench::{heat_1d, heat_3d, ito_fixture, morrey_plan};

fn pde_sweep(c: &mut Criterion) {
    let gaussian = |x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>() / 0.2).exp();
    let (field, grid) = heat_1d();
    c.bench_function("pde_backward_sweep_1d", |b| {
        b.iter(|| solve_backward(field.clone(), &gaussian, black_box(&grid)).unwrap())
    });
    let (field, grid) = heat_3d();
    let mut group = c.benchmark_group("pde_3d");
    group.sample_size(10);
    group.bench_function("pde_backward_sweep_3d", |b| {
        b.iter(|| solve_backward(field.clone(), &gaussian, black_box(&grid)).unwrap())
    });
    group.finish();
}

fn morrey(c: &mut Criterion) {
    let f = |_t: f64, x: &[f64]| 1.0 / x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let plan = morrey_plan();
    let origin = vec![vec![0.0; 3]];
    c.bench_function("morrey_hat_inverse_radius_3d", |b| {
        b.iter(|| morrey_hat(&f, 3, 2.0, black_box(1.0), &plan, &origin).unwrap())
    });
}

fn ito(c: &mut Criterion) {
    let (grid, values, path) = ito_fixture();
    c.bench_function("iterated_ito_order2", |b| {
        b.iter(|| iterated_ito(&grid, black_box(&values), &[0, 1], &path).unwrap())
    });
}

criterion_group!(benches, pde_sweep, morrey, ito);
criterion_main!(benches);
