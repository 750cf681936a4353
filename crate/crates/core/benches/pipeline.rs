use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use streamqa::cluster::{choose_k, cluster_with, events_from, ClusterConfig, KRatio};
use streamqa::compress::{compress_stream_with, embed_event, CompressionConfig, HashEmbedder};
use streamqa::dataset::{generate_paths_with, PathConfig};
use streamqa::sim::{make_synthetic, SyntheticSpec};
use streamqa::Exec;

const MODES: [Exec; 2] = [Exec::Sequential, Exec::Parallel];

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        segments: 10,
        frames_per_segment: 60,
        events_per_segment: 3,
        rows: 4,
        dim: 64,
        ..Default::default()
    }
}

fn bench_cluster(c: &mut Criterion) {
    let frames = make_synthetic(&spec()).unwrap().all_frames();
    let config = ClusterConfig { seed: 1, ..ClusterConfig::new(choose_k(frames.len(), KRatio::default())) };
    let mut group = c.benchmark_group("cluster");
    for exec in MODES {
        group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), frames.len()), &exec, |b, &exec| {
            b.iter(|| cluster_with(black_box(&frames), &config, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_compress(c: &mut Criterion) {
    let frames = make_synthetic(&spec()).unwrap().all_frames();
    let result = cluster_with(&frames, &ClusterConfig { seed: 1, ..ClusterConfig::new(40) }, Exec::default()).unwrap();
    let events = events_from(&result, &frames).unwrap();
    let embeddings: Vec<_> = events.iter().map(|e| embed_event(e, &frames, None, true).unwrap()).collect();
    let question = HashEmbedder::new(64).project("Where did the kettle go after the guitar?");
    let config = CompressionConfig::default();
    let mut group = c.benchmark_group("compress");
    for exec in MODES {
        group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), events.len()), &exec, |b, &exec| {
            b.iter(|| compress_stream_with(&events, &embeddings, &frames, black_box(&question), &config, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_paths(c: &mut Criterion) {
    let manifest = make_synthetic(&spec()).unwrap().manifest;
    let config = PathConfig { num_paths: 256, ..PathConfig::default() };
    let mut group = c.benchmark_group("paths");
    for exec in MODES {
        group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), config.num_paths), &exec, |b, &exec| {
            b.iter(|| generate_paths_with(black_box(&manifest), &config, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_cluster, bench_compress, bench_paths);
criterion_main!(benches);
