//! Sequential vs parallel execution of the Monte-Carlo heavy loops. Build
//! without default features to see the rayon-free fallback, where both
//! modes run the same plain loop.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use unside::graph::{compute_stats, generate_dataset, median_bandwidth, permutation_test, Generator, GraphDatasetSpec};
use unside::par::stream_rng;
use unside::posterior::PosteriorModel;
use unside::sampling::{sample_batch, Guidance, SampleRunConfig};
use unside::toy::toy_exact;
use unside::voronoi::{voronoi_prob_mc, VoronoiQuery};
use unside::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn voronoi_mc(c: &mut Criterion) {
    let q = VoronoiQuery::new(3, 3.0).unwrap();
    let mut group = c.benchmark_group("voronoi_prob_mc");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 100_000), |b| {
            b.iter(|| voronoi_prob_mc(&q, 100_000, &mut stream_rng(1, 0), exec).unwrap())
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let model = toy_exact();
    let cfg = SampleRunConfig::uniform(model.layout(), 32, 7);
    let mut group = c.benchmark_group("sample_batch");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 2_000), |b| {
            b.iter(|| sample_batch(&model, &cfg, &Guidance::None, model.schedule(), black_box(2_000), exec).unwrap())
        });
    }
    group.finish();
}

fn mmd_permutations(c: &mut Criterion) {
    let feats = |seed| {
        generate_dataset(&GraphDatasetSpec {
            generator: Generator::ErdosRenyi { p: 0.3 },
            n: 8,
            count: 200,
            seed,
        })
        .unwrap()
        .iter()
        .map(|g| compute_stats(g).degree_hist)
        .collect::<Vec<_>>()
    };
    let (a, b) = (feats(1), feats(2));
    let sigma = median_bandwidth(&a, &b);
    let mut group = c.benchmark_group("permutation_test");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 200), |bench| {
            bench.iter(|| permutation_test(&a, &b, sigma, 200, 3, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, voronoi_mc, sampling, mmd_permutations);
criterion_main!(benches);
