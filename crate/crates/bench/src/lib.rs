//! Fixtures shared by the benchmarks.

use anomaly_elbo::{ImageDataset, SplitTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` uniform-noise images of `side x side` pixels with labels cycling
/// through ten classes.
pub fn noise_images(n: usize, side: usize, seed: u64) -> ImageDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..n * side * side).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels = (0..n).map(|i| (i % 10) as u8).collect();
    ImageDataset::new(pixels, labels, side, side, SplitTag::Train).expect("consistent shape")
}

/// `n` scores drawn from a coarse grid, so ties occur, with random labels.
pub fn tied_scores(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..n).map(|_| rng.random_range(0..1000) as f64).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
    labels[0] = 0;
    labels[1] = 1;
    (scores, labels)
}
