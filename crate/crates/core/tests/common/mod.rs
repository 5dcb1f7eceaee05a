#![allow(dead_code)]

use std::path::Path;

use anomaly_elbo::data::write_idx;
use anomaly_elbo::{ImageDataset, SplitTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small images whose classes differ in shape: class `k` draws a bright
/// bar whose orientation and position depend on `k`, over faint noise.
/// Pixels are multiples of 1/255 so IDX round trips are exact.
pub fn shapes(per_class: usize, classes: u8, side: usize, seed: u64) -> ImageDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * classes as usize {
        let k = (i % classes as usize) as u8;
        let horizontal = k & 1 == 0;
        let offset = (k as usize / 2 * 2 + 1) % side;
        let intensity = rng.random_range(0.6..1.0);
        for r in 0..side {
            for c in 0..side {
                let on = if horizontal { r / 2 == offset / 2 } else { c / 2 == offset / 2 };
                let v: f64 = if on { intensity } else { rng.random_range(0.0..0.1) };
                images.push((v * 255.0).round() / 255.0);
            }
        }
        labels.push(k);
    }
    ImageDataset::new(images, labels, side, side, SplitTag::Train).unwrap()
}

/// Two classes drawn from one distribution: blobs at random positions.
pub fn twin_classes(per_class: usize, side: usize, seed: u64) -> ImageDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * per_class {
        let (cr, cc) = (rng.random_range(0..side), rng.random_range(0..side));
        for r in 0..side {
            for c in 0..side {
                let d2 = (r as f64 - cr as f64).powi(2) + (c as f64 - cc as f64).powi(2);
                let v = (-d2 / 4.0).exp() * 0.9 + rng.random_range(0.0..0.05);
                images.push((v.min(1.0) * 255.0).round() / 255.0);
            }
        }
        labels.push((i % 2) as u8);
    }
    ImageDataset::new(images, labels, side, side, SplitTag::Train).unwrap()
}

/// Writes train and test sets under the standard IDX file names.
pub fn write_benchmark(dir: &Path, train: &ImageDataset, test: &ImageDataset) {
    std::fs::create_dir_all(dir).unwrap();
    write_idx(train, &dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte")).unwrap();
    write_idx(test, &dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte")).unwrap();
}

pub mod grad {
    use anomaly_elbo::autodiff::{finite_diff, relative_error};
    use anomaly_elbo::vae::{build_elbo, elbo, Elbo, Linear, VaeParams};
    use anomaly_elbo::{Graph, Result, Tensor};

    pub const STEP: f64 = 1e-5;
    /// Below this magnitude errors are compared absolutely.
    pub const FLOOR: f64 = 1e-6;
    /// Tolerance the comparison is meant for.
    pub const TOLERANCE: f64 = 1e-4;

    /// Round-off of a central difference is about `|f| eps / STEP`; the
    /// floor is raised so that this noise alone stays below [`TOLERANCE`].
    pub fn floor_for(value: f64) -> f64 {
        FLOOR.max(value.abs() * f64::EPSILON / STEP / TOLERANCE)
    }
    /// Central differences straddling a ReLU kink measure neither side's
    /// slope; cases with a hidden pre-activation this close to zero are not
    /// valid oracle inputs.
    pub const MIN_RELU_MARGIN: f64 = 1e-3;

    fn affine(v: &[f64], layer: &Linear) -> Vec<f64> {
        let (n, m) = (layer.fan_in(), layer.fan_out());
        let w = layer.weight.data();
        (0..m)
            .map(|j| layer.bias.data()[j] + (0..n).map(|i| v[i] * w[i * m + j]).sum::<f64>())
            .collect()
    }

    /// Smallest |pre-activation| over both ReLU layers at the base point.
    pub fn relu_margin(params: &VaeParams, x: &[f64], eps: &[f64]) -> f64 {
        let pre = affine(x, &params.enc_hidden);
        let h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let mu = affine(&h, &params.enc_mu);
        let lv = affine(&h, &params.enc_logvar);
        let z: Vec<f64> = (0..mu.len()).map(|j| mu[j] + (0.5 * lv[j]).exp() * eps[j]).collect();
        let dec = affine(&z, &params.dec_hidden);
        pre.iter().chain(&dec).fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Largest relative error between tape gradients and central
    /// differences of the ELBO, the KL-term and the reconstruction term,
    /// taken over the input and every parameter entry.
    pub fn max_error(params: &VaeParams, x: &[f64], eps: &[f64], c: f64) -> Result<f64> {
        let d = x.len();
        let mut g = Graph::new();
        let xv = g.variable(Tensor::matrix(1, d, x.to_vec())?);
        let vars = params.attach(&mut g, true);
        let ev = g.constant(Tensor::matrix(1, eps.len(), eps.to_vec())?);
        let nodes = build_elbo(&mut g, xv, &vars, Some(ev), c)?;

        let eps_t = Tensor::vector(eps.to_vec());
        let x_t = Tensor::vector(x.to_vec());
        type Pick = fn(&Elbo) -> f64;
        let picks: [(_, Pick); 3] = [
            (nodes.elbo, |e| e.value),
            (nodes.kl, |e| e.kl),
            (nodes.rec, |e| e.rec),
        ];
        let mut worst: f64 = 0.0;
        for (root, pick) in picks {
            let grads = g.backward_retained(root)?;
            let floor = floor_for(pick(&elbo(&x_t, params, Some(&eps_t), c)?));
            let mut compare = |analytic: &Tensor, numeric: &Tensor| {
                for (a, n) in analytic.data().iter().zip(numeric.data()) {
                    worst = worst.max(relative_error(*a, *n, floor));
                }
            };
            let num_x = finite_diff(|t| Ok(pick(&elbo(t, params, Some(&eps_t), c)?)), &x_t, STEP)?;
            compare(grads.get(xv).expect("x gradient"), &num_x);
            for (k, var) in vars.vars().into_iter().enumerate() {
                let base = params.tensors()[k].clone();
                let num = finite_diff(
                    |t| {
                        let mut p = params.clone();
                        *p.tensors_mut()[k] = t.clone();
                        Ok(pick(&elbo(&x_t, &p, Some(&eps_t), c)?))
                    },
                    &base,
                    STEP,
                )?;
                compare(grads.get(var).expect("parameter gradient"), &num);
            }
        }
        Ok(worst)
    }
}
