//! Compares the data-parallel batch runner against the sequential fallback
//! on a realistic workload: 64 independent one-minute calls.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use lack_core::runner::{derive_call_seed, run_batch, run_batch_sequential};
use lack_core::sim::Scenario;

fn scenario() -> Scenario {
    Scenario::from_toml_str(
        r#"
        [network]
        loss = 0.01
        base_delay_ms = 30

        [network.jitter]
        model = "normal"
        sigma_ms = 10.0

        [duration]
        mode = "fixed"
        seconds = 60.0

        [steganogram]
        size_bits = 1000000

        [controller]
        mode = "constant"
        rate_bps = 320.0

        [experiment]
        master_seed = 1
        "#,
    )
    .expect("benchmark scenario is valid")
}

fn bench_batch(c: &mut Criterion) {
    let scenario = scenario();
    let seeds: Vec<u64> = (0..64).map(|i| derive_call_seed(42, i)).collect();

    let mut group = c.benchmark_group("batch_64_calls_60s");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| run_batch(black_box(&scenario), black_box(&seeds)).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| run_batch_sequential(black_box(&scenario), black_box(&seeds)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_batch);
criterion_main!(benches);
