//! Dilated vs dense attention, and one worker vs the whole pool. Build with
//! `--no-default-features` to measure the sequential fallback instead of rayon.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use longvit_core::attention::{
    dense_mha, multihead_dilated_attention, AttentionWeights, DilationSchedule,
};
use longvit_core::encoder::{EncoderConfig, EncoderWeights, Mode};
use longvit_core::init::normal;
use longvit_core::par;
use longvit_core::tasks::{sample_gradients, Label, Sample, Target, TaskModel};

const BUILD: &str = if cfg!(feature = "parallel") {
    "rayon"
} else {
    "sequential"
};

fn thread_counts() -> Vec<usize> {
    let all = par::current_threads();
    if all > 1 {
        vec![1, all]
    } else {
        vec![1]
    }
}

fn attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = AttentionWeights::random_with_bias(64, 4, 0.1, &mut rng).unwrap();
    let mut group = c.benchmark_group(format!("attention/{BUILD}"));
    group.sample_size(10);
    for n in [1024usize, 4096, 16_384] {
        let x = normal(&[n, 64], 1.0, &mut rng);
        let sched = DilationSchedule::extended(n);
        group.throughput(Throughput::Elements(n as u64));
        for threads in thread_counts() {
            group.bench_with_input(
                BenchmarkId::new(format!("dilated/t{threads}"), n),
                &n,
                |b, _| {
                    par::with_threads(threads, || {
                        b.iter(|| multihead_dilated_attention(&x, &w, &sched).unwrap())
                    })
                },
            );
        }
        if n <= 1024 {
            group.bench_with_input(BenchmarkId::new("dense", n), &n, |b, _| {
                b.iter(|| dense_mha(&x, &w).unwrap())
            });
        }
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let cfg = EncoderConfig::tiny();
    let model = TaskModel::new(cfg.clone(), EncoderWeights::seeded(&cfg, 0).unwrap(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sample = Sample {
        id: "bench".into(),
        patches: normal(&[256, cfg.patch_len()], 1.0, &mut rng),
        grid: (16, 16),
        label: Label::Class(1),
    };
    let mut group = c.benchmark_group(format!("train_step/{BUILD}"));
    group.sample_size(10);
    for threads in thread_counts() {
        group.bench_function(format!("tiny/N=256/t{threads}"), |b| {
            par::with_threads(threads, || {
                b.iter(|| {
                    sample_gradients(
                        &model,
                        &sample,
                        Target::Class(1),
                        &cfg.schedule,
                        &mut Mode::Eval,
                    )
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, attention, training_step);
criterion_main!(benches);
