use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rare_bench::{codec, layouts};
use rare_core::metrics::{chamfer_distance, docsim, fid_from_features, mean_pairwise_chamfer};
use std::hint::black_box;

fn pairwise(c: &mut Criterion) {
    let ls = layouts(64, 3);
    let mut g = c.benchmark_group("pair");
    g.bench_function("chamfer", |b| b.iter(|| chamfer_distance(black_box(&ls[0]), black_box(&ls[1])).unwrap()));
    g.bench_function("docsim", |b| b.iter(|| docsim(black_box(&ls[0]), black_box(&ls[1])).unwrap()));
    g.finish();
    c.bench_function("mean_pairwise_chamfer/32", |b| b.iter(|| mean_pairwise_chamfer(black_box(&ls[..32])).unwrap()));
}

fn fid(c: &mut Criterion) {
    let codec = codec();
    let mut g = c.benchmark_group("fid");
    for n in [256, 1000] {
        let a = codec.layout_features(&layouts(n, 4)).unwrap();
        let r = codec.layout_features(&layouts(n, 5)).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| fid_from_features(black_box(&a), black_box(&r)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, pairwise, fid);
criterion_main!(benches);
