use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dtsforge::drr::{project_binary_mask_with, project_view_with, AttenuationModel, ProjectionGeometry};
use dtsforge::phantom::uniform_sphere;
use dtsforge::{volume::binarize, Exec};

fn projection(c: &mut Criterion) {
    let v = uniform_sphere([96, 96, 96], [2.0; 3], 70.0, 0.0, 2).unwrap();
    let g = ProjectionGeometry::default().with_detector_pixels([128, 128]).unwrap();
    let m = AttenuationModel::default();
    let mask = binarize(&v, -500.0);
    let mut group = c.benchmark_group("projection");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::new("intensity", format!("{exec:?}")), &exec, |b, &e| {
            b.iter(|| project_view_with(&v, &g, 30.0, &m, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mask", format!("{exec:?}")), &exec, |b, &e| {
            b.iter(|| project_binary_mask_with(&mask, &g, 30.0, 1.0, e).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, projection);
criterion_main!(benches);
