use std::hint::black_box;

use anomaly_elbo::eval::{auroc, calibrate_threshold, LabeledScores, ScoredMask};
use anomaly_elbo::scoring::{score_images, Images, ScoringOptions};
use anomaly_elbo::train::{evaluate_loss, train_epoch, AdamState};
use anomaly_elbo::vae::{init_params, VaeConfig};
use anomaly_elbo::TrainConfig;
use anomaly_elbo_bench::{noise_images, tied_scores};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn training(c: &mut Criterion) {
    let data = noise_images(512, 28, 1);
    let config = VaeConfig::new(784);
    let params = init_params(&config).unwrap();
    let tconf = TrainConfig::default();

    c.bench_function("train_epoch 512x784", |b| {
        b.iter_batched(
            || (params.clone(), AdamState::new(&params), ChaCha8Rng::seed_from_u64(0)),
            |(mut p, mut s, mut rng)| train_epoch(&mut p, &mut s, &data, &tconf, 1e-4, 1.0, &mut rng).unwrap(),
            BatchSize::LargeInput,
        )
    });
    c.bench_function("evaluate_loss 512x784", |b| {
        b.iter(|| evaluate_loss(black_box(&params), &data, 1.0, 256).unwrap())
    });
}

fn scoring(c: &mut Criterion) {
    let data = noise_images(64, 28, 2);
    let params = init_params(&VaeConfig::new(784)).unwrap();
    let opts = ScoringOptions::default();
    c.bench_function("score_images 64x784 all methods", |b| {
        b.iter(|| score_images(Images::from(&data), black_box(&params), 1.0, &opts).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let (scores, labels) = tied_scores(100_000, 3);
    let ls = LabeledScores::new(scores, labels).unwrap();
    c.bench_function("auroc 100k", |b| b.iter(|| auroc(black_box(&ls)).unwrap()));

    let maps = noise_images(200, 28, 4);
    let masks: Vec<bool> = maps.images().iter().map(|&v| v > 0.9).collect();
    let set: Vec<ScoredMask> = (0..maps.len())
        .map(|i| ScoredMask {
            scores: maps.image(i),
            mask: &masks[i * 784..(i + 1) * 784],
        })
        .collect();
    c.bench_function("calibrate_threshold 200 maps", |b| {
        b.iter(|| calibrate_threshold(black_box(&set)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = training, scoring, metrics
}
criterion_main!(benches);
