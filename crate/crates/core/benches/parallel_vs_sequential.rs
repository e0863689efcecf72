use std::hint::black_box;
use std::time::Duration;

use bgkit::covering::{build_covering, build_partition, BumpTemplate};
use bgkit::geometry::AtlasSpec;
use bgkit::operators::deformation_laplacian;
use bgkit::par::set_parallel;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn parallel_vs_sequential(c: &mut Criterion) {
    let coarse = AtlasSpec::warped_torus(2.0, 1.0, 12).build().unwrap();
    let cover = build_covering(&coarse, 0.8).unwrap();
    let fine = AtlasSpec::warped_torus(2.0, 1.0, 32).build().unwrap();

    let mut group = c.benchmark_group("parallel_vs_sequential");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for (label, parallel) in [("sequential", false), ("parallel", true)] {
        group.bench_with_input(BenchmarkId::new("partition", label), &parallel, |b, &p| {
            set_parallel(p);
            b.iter(|| build_partition(black_box(&coarse), &cover, BumpTemplate::Quintic).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("deformation_laplacian", label), &parallel, |b, &p| {
            set_parallel(p);
            b.iter(|| deformation_laplacian(black_box(&fine)).unwrap())
        });
    }
    set_parallel(true);
    group.finish();
}

criterion_group!(benches, parallel_vs_sequential);
criterion_main!(benches);
