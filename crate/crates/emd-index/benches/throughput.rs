//! Build and query throughput, sized so a full run stays under a couple of
//! minutes. Group and bench names are identical with and without the
//! `parallel` feature, so
//!
//! ```text
//! cargo bench -p emd-index -- --save-baseline parallel
//! cargo bench -p emd-index --no-default-features -- --baseline parallel
//! ```
//!
//! compares the rayon core against the sequential fallback on the same
//! workloads. The `thread_scaling` group only exists with the feature.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use emd_index::exact_emd;
use emd_index::index::{BuildConfig, EmdIndex};
use emd_index::normal::{emd_lb, fit_normal, precompute_errors, SubIntervalGrid};
use emd_index::projection::{project, select_projections};
use emd_index::query::batch_query;
use emd_index::synthetic::{generate, Layout, SyntheticSpec};
use emd_index::DiscreteDistribution;

fn spec(count: usize, bins: usize) -> SyntheticSpec {
    SyntheticSpec {
        count,
        bins,
        dim: 2,
        clusters: 8,
        spread: 0.05,
        layout: Layout::Scatter,
        extent: 10.0,
    }
}

fn corpus(count: usize, bins: usize, seed: u64) -> Vec<DiscreteDistribution> {
    generate(&spec(count, bins), seed).unwrap()
}

fn bench_index_build(c: &mut Criterion) {
    let records = corpus(5000, 16, 11);
    let config = BuildConfig::default();
    let mut group = c.benchmark_group("index_build");
    group.sample_size(10);
    group.throughput(Throughput::Elements(records.len() as u64));
    group.bench_function("records_5000_bins_16", |b| {
        b.iter_batched(
            || records.clone(),
            |r| EmdIndex::build(r, &config).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn bench_batch_query(c: &mut Criterion) {
    let index = EmdIndex::build(corpus(5000, 16, 11), &BuildConfig::default()).unwrap();
    let queries = corpus(20, 16, 12);
    let mut group = c.benchmark_group("batch_query");
    group.sample_size(10);
    group.throughput(Throughput::Elements(queries.len() as u64));
    group.bench_function("k4_queries_20_records_5000", |b| {
        b.iter(|| batch_query(&index, &queries, 4).unwrap())
    });
    group.finish();
}

fn bench_kernels(c: &mut Criterion) {
    let pool = corpus(64, 64, 13);
    let mut group = c.benchmark_group("kernels");
    group.bench_function("exact_emd_bins_64", |b| {
        let mut i = 0usize;
        b.iter(|| {
            i = (i + 1) % (pool.len() - 1);
            exact_emd(&pool[i], &pool[i + 1]).unwrap()
        })
    });

    let frame = select_projections(&pool, 1).unwrap().into_iter().next().unwrap();
    let grid = SubIntervalGrid::even(frame.t_min(), frame.t_max(), 4).unwrap();
    let summaries: Vec<_> = pool
        .iter()
        .map(|d| {
            let p = project(d, &frame).unwrap();
            precompute_errors(&p, fit_normal(&p), &grid, d.id()).unwrap()
        })
        .collect();
    group.bench_function("emd_lb_s4", |b| {
        let mut i = 0usize;
        b.iter(|| {
            i = (i + 1) % (summaries.len() - 1);
            emd_lb(&summaries[i], &summaries[i + 1], &grid).unwrap()
        })
    });
    group.finish();
}

#[cfg(feature = "parallel")]
fn bench_thread_scaling(c: &mut Criterion) {
    let index = EmdIndex::build(corpus(5000, 16, 11), &BuildConfig::default()).unwrap();
    let queries = corpus(20, 16, 12);
    let mut group = c.benchmark_group("thread_scaling");
    group.sample_size(10);
    for threads in [1usize, 2, 4, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        group.bench_function(format!("batch_query_threads_{threads}"), |b| {
            b.iter(|| pool.install(|| batch_query(&index, &queries, 4).unwrap()))
        });
    }
    group.finish();
}

#[cfg(feature = "parallel")]
criterion_group!(
    benches,
    bench_index_build,
    bench_batch_query,
    bench_kernels,
    bench_thread_scaling
);
#[cfg(not(feature = "parallel"))]
criterion_group!(benches, bench_index_build, bench_batch_query, bench_kernels);
criterion_main!(benches);
