use criterion::{criterion_group, criterion_main, Criterion};
use probecount::{train, SearchGrid, ThresholdGrid};
use probecount_bench::random_buffer;
use std::hint::black_box;

fn bench_train(c: &mut Criterion) {
    let grid = ThresholdGrid::default();
    let search = SearchGrid::default();
    let buffer = random_buffer(7, 40, &grid);
    c.bench_function("train_full_buffer_16000_points", |b| {
        b.iter(|| train(black_box(&buffer), black_box(&search)).unwrap())
    });

    let small = random_buffer(8, 5, &grid);
    c.bench_function("train_5_samples", |b| b.iter(|| train(black_box(&small), &search).unwrap()));
}

criterion_group!(benches, bench_train);
criterion_main!(benches);
