use std::rc::Rc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rare_bench::{codec, denoiser, layouts, reward_model};
use rare_core::diffusion::{sample_batch, SampleConfig};
use rare_core::nn::{Graph, Mat, Segments};
use std::hint::black_box;

/// One guided noise prediction for a batch of 16 eleven-element layouts.
fn denoiser_forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("denoiser_forward");
    for (width, layers) in [(32, 2), (64, 4)] {
        let model = denoiser(width, layers);
        let seg = Rc::new(Segments::from_lengths(&[11; 16]));
        let z = Mat::randn(seg.total_rows(), model.latent_dim(), 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let (t, cond) = (vec![25; 16], vec![0; 16]);
        g.bench_with_input(BenchmarkId::from_parameter(format!("w{width}x{layers}")), &(), |b, _| {
            b.iter(|| {
                let mut graph = Graph::new(model.store());
                let zv = graph.constant(z.clone());
                let e = model.guided_eps_graph(&mut graph, zv, &seg, &t, &cond, 1.0);
                black_box(graph.value(e).get(0, 0))
            })
        });
    }
    g.finish();
}

/// A full reverse chain (T = 50) for 4 layouts, with log-densities recorded.
fn sampling(c: &mut Criterion) {
    let model = denoiser(64, 4);
    let codec = codec();
    let mut g = c.benchmark_group("sample");
    g.sample_size(10);
    g.bench_function("chain_x4", |b| {
        b.iter(|| sample_batch(&model, &codec, &[0, 1, 0, 1], Some(&[11; 4]), &SampleConfig { guidance: 1.0, seed: 3, record: true }).unwrap())
    });
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let codec = codec();
    let reward = reward_model();
    let ls = layouts(64, 6);
    let zs = codec.encode_batch(&ls).unwrap();
    let refs: Vec<&Mat> = zs.iter().collect();
    let conds = vec![0; refs.len()];
    c.bench_function("reward_score/64", |b| b.iter(|| reward.score_batch(black_box(&refs), &conds)));
    c.bench_function("codec_encode/64", |b| b.iter(|| codec.encode_batch(black_box(&ls)).unwrap()));
}

criterion_group!(benches, denoiser_forward, sampling, scoring);
criterion_main!(benches);
