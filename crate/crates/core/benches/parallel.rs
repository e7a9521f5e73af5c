//! Sequential versus rayon execution of the similarity scoring kernel.

use std::hint::black_box;

use ads_core::exec;
use ads_core::nn::cosine_similarity;
use ads_core::rng::stream;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

fn embeddings(n: usize, dim: usize, tag: &str) -> Vec<Vec<f64>> {
    let mut rng = stream(0, tag, 0);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn best_match(labeled: &[Vec<f64>], u: &[f64]) -> f64 {
    labeled
        .iter()
        .map(|f| cosine_similarity(f, u).unwrap_or(f64::NEG_INFINITY))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn scoring(c: &mut Criterion) {
    let labeled = embeddings(200, 64, "bench-labeled");
    let mut group = c.benchmark_group("max_cosine");
    group.sample_size(20);
    for n in [1000, 4000] {
        let unlabeled = embeddings(n, 64, "bench-unlabeled");
        group.bench_with_input(BenchmarkId::new("seq", n), &unlabeled, |b, u| {
            b.iter(|| exec::seq::map_slice(black_box(u), |g| best_match(&labeled, g)))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("par", n), &unlabeled, |b, u| {
            b.iter(|| exec::par::map_slice(black_box(u), |g| best_match(&labeled, g)))
        });
    }
    group.finish();
}

criterion_group!(benches, scoring);
criterion_main!(benches);
