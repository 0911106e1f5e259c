use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stylegallery_bench::{random_costs, random_points};
use stylegallery_core::clustering::{initial_clusters, optimize_clusters, ClusterOptConfig};
use stylegallery_core::fixtures::annotated_suite;
use stylegallery_core::matching::minimum_enclosing_circle;
use stylegallery_core::metrics::hungarian;
use stylegallery_core::pipeline::prepare_image;
use stylegallery_core::transfer::masked_attention;
use stylegallery_core::Providers;

fn circle(c: &mut Criterion) {
    let mut g = c.benchmark_group("enclosing_circle");
    for n in [40, 1024] {
        let pts = random_points(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, p| b.iter(|| minimum_enclosing_circle(black_box(p))));
    }
    g.finish();
}

fn assignment(c: &mut Criterion) {
    let mut g = c.benchmark_group("hungarian");
    for n in [8, 64] {
        let cost = random_costs(n, n, 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, m| b.iter(|| hungarian(black_box(m)).unwrap()));
    }
    g.finish();
}

fn attention(c: &mut Criterion) {
    let q = random_costs(1024, 8, 3);
    let k = random_costs(1024, 8, 4);
    let v = random_costs(1024, 8, 5);
    let qm: Vec<bool> = (0..1024).map(|i| i % 3 != 0).collect();
    let km: Vec<bool> = (0..1024).map(|i| i % 2 == 0).collect();
    c.bench_function("masked_attention_1024", |b| {
        b.iter(|| masked_attention(q.view(), k.view(), v.view(), black_box(&qm), black_box(&km)))
    });
}

fn clustering(c: &mut Criterion) {
    let providers = Providers::synthetic(0);
    let fixture = annotated_suite().swap_remove(0);
    let prep = prepare_image(&providers, &fixture.image, 15).unwrap();
    let cfg = ClusterOptConfig::default();
    let mut g = c.benchmark_group("clustering");
    g.sample_size(10);
    g.bench_function("kmeans_512", |b| b.iter(|| initial_clusters("b", &prep.fused, &cfg, 0).unwrap()));
    let init = initial_clusters("b", &prep.fused, &cfg, 0).unwrap();
    g.bench_function("optimize_512", |b| {
        b.iter(|| optimize_clusters(&init, prep.depth.as_ref(), &prep.tokens, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, circle, assignment, attention, clustering);
criterion_main!(benches);
