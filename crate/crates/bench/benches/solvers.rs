use atlasforge_bench::{bench_field, bench_matrix_field, noise_image};
use atlasforge_core::dmspline::{solve_spline, SplineConfig};
use atlasforge_core::flow::{el_residual, phi_step};
use atlasforge_core::grid::{invert_deformation, jacobian, ScalarGrid};
use atlasforge_core::ogden::{v_update, w_update, CouplingParams, OgdenParams};
use atlasforge_core::potts::{potts_1d, potts_2d, AdmmSchedule};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn bench_potts_1d(c: &mut Criterion) {
    let mut group = c.benchmark_group("potts_1d");
    for n in [64usize, 256] {
        let img = noise_image(n, 2, 7);
        let data: Vec<f64> = img.data()[..n].to_vec();
        let weights = vec![1.0; n];
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| potts_1d(black_box(&data), black_box(&weights), 0.1).unwrap())
        });
    }
    group.finish();
}

fn bench_potts_2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("potts_2d");
    group.sample_size(20);
    for n in [64usize, 128] {
        let img = noise_image(n, n, 11);
        let weights = ScalarGrid::constant(n, n, 1.0);
        let schedule = AdmmSchedule::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| potts_2d(black_box(&img), &weights, 0.2, &schedule).unwrap())
        });
    }
    group.finish();
}

fn bench_v_update(c: &mut Criterion) {
    let n = 64;
    let v = bench_matrix_field(n);
    let grad_phi = jacobian(&bench_field(n, 1.5));
    let p = OgdenParams::default();
    let cp = CouplingParams::default();
    let w = w_update(&v, cp.beta).unwrap();
    c.bench_function("v_update_64", |b| {
        b.iter(|| v_update(black_box(&v), &w, &grad_phi, &p, &cp).unwrap())
    });
}

fn bench_flow_step(c: &mut Criterion) {
    let n = 64;
    let u = bench_field(n, 1.0);
    let v = bench_matrix_field(n);
    let theta = noise_image(n, n, 3);
    let cp = CouplingParams::default();
    c.bench_function("flow_step_64", |b| {
        b.iter(|| {
            let f = el_residual(
                black_box(&u),
                &v,
                &theta,
                &theta,
                &ScalarGrid::constant(n, n, 0.0),
                &theta,
                &cp,
            )
            .unwrap();
            phi_step(&u, &f, &cp).unwrap()
        })
    });
}

fn bench_invert(c: &mut Criterion) {
    let u = bench_field(64, 2.0);
    c.bench_function("invert_deformation_64", |b| {
        b.iter(|| invert_deformation(black_box(&u)).unwrap())
    });
}

fn bench_spline(c: &mut Criterion) {
    let mut group = c.benchmark_group("spline_solve");
    group.sample_size(10);
    let u = bench_field(64, 2.0);
    for cells in [8usize, 16] {
        let cfg = SplineConfig {
            cells_x: cells,
            cells_y: cells,
            ..SplineConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(cells), &cells, |b, _| {
            b.iter(|| solve_spline(black_box(&u), &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_potts_1d,
    bench_potts_2d,
    bench_v_update,
    bench_flow_step,
    bench_invert,
    bench_spline
);
criterion_main!(benches);
