use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fdspde::harness::run_extrapolation_study;
use fdspde::integrator::{integrate, SchemeConfig};
use fdspde::noise::sample_path;
use fdspde::{apply_lh, vandermonde_weights, AssembledOperator};
use fdspde_bench::{preset_problem, smooth_field};

fn operator_application(c: &mut Criterion) {
    let mut group = c.benchmark_group("apply");
    for (preset, n) in [("heat", 4096), ("variable", 64), ("variable", 256)] {
        let (spec, _, grid) = preset_problem(preset, n);
        let u = smooth_field(&grid);
        let id = format!("{preset}/n={n}");
        group.bench_with_input(BenchmarkId::new("reference", &id), &u, |b, u| {
            b.iter(|| apply_lh(&spec, 0.0, black_box(u)).unwrap())
        });
        let op = AssembledOperator::assemble(&spec, &grid, 0.0).unwrap();
        group.bench_with_input(BenchmarkId::new("assembled", &id), &u, |b, u| {
            b.iter(|| op.apply(black_box(u)).unwrap())
        });
    }
    group.finish();
}

fn time_stepping(c: &mut Criterion) {
    let mut group = c.benchmark_group("integrate");
    group.sample_size(10);
    for preset in ["upwind", "variable"] {
        let (spec, data, grid) = preset_problem(preset, 64);
        let path = sample_path(1, 0.01, 64, spec.noise_count()).unwrap();
        for config in [
            SchemeConfig::explicit(0.01 / 64.0).without_cfl_check(),
            SchemeConfig::implicit(0.01 / 64.0),
        ] {
            let id = format!("{preset}/{}", config.method.name());
            group.bench_function(id, |b| {
                b.iter(|| integrate(&spec, &data, &grid, &path, &config).unwrap())
            });
        }
    }
    group.finish();
}

fn extrapolation(c: &mut Criterion) {
    c.bench_function("vandermonde_weights/k=6", |b| {
        b.iter(|| vandermonde_weights(black_box(6), None).unwrap())
    });
    let text = "[problem]\npreset = \"upwind\"\n[time]\ndt = { kind = \"fixed\", steps = 1000 }\n[noise]\nreplicates = 2\n[study]\nlevels = 3\n";
    let study = fdspde::config::RunConfig::from_toml_str(text)
        .unwrap()
        .study_config()
        .unwrap();
    let mut group = c.benchmark_group("study");
    group.sample_size(10);
    group.bench_function("upwind/k=1", |b| {
        b.iter(|| run_extrapolation_study(&study).unwrap())
    });
    group.finish();
}

criterion_group!(benches, operator_application, time_stepping, extrapolation);
criterion_main!(benches);
