//! Compares the multi-seed runner's dispatch (rayon when the `parallel`
//! feature is on, a plain iterator otherwise) against a hand-rolled
//! sequential loop over the same per-seed work. Run `cargo bench` and
//! `cargo bench --no-default-features` to see both dispatch modes; the
//! sequential_loop arm is the feature-independent reference point.

use criterion::{criterion_group, criterion_main, Criterion};
use ldpstream_core::defense::mse_stream;
use ldpstream_core::harness::{build_seed_data, run_experiment, simulate_seed, ExperimentConfig};
use std::hint::black_box;

fn bench_config() -> ExperimentConfig {
    ExperimentConfig {
        n: 20_000,
        t_len: 100,
        seeds: (0..4).collect(),
        ..ExperimentConfig::default()
    }
}

fn runner(c: &mut Criterion) {
    let cfg = bench_config();
    let mode = if cfg!(feature = "parallel") { "rayon" } else { "plain iterator" };
    eprintln!("dispatch arm compiled as: {mode}");

    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);

    group.bench_function("dispatch", |b| {
        b.iter(|| black_box(run_experiment(black_box(&cfg)).unwrap()))
    });

    group.bench_function("sequential_loop", |b| {
        b.iter(|| {
            let mut gaps = Vec::with_capacity(cfg.seeds.len());
            for &seed in &cfg.seeds {
                let data = build_seed_data(&cfg, seed).unwrap();
                let out = simulate_seed(&cfg, seed, &data, true).unwrap();
                gaps.push(mse_stream(&out.releases, &data.targets).unwrap());
            }
            black_box(gaps)
        })
    });

    group.finish();
}

criterion_group!(benches, runner);
criterion_main!(benches);
