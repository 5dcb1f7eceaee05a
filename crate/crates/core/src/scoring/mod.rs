//! Sample-wise and pixel-wise anomaly scores.
//!
//! Sample scores are the negative ELBO and its two terms, signed so that a
//! higher value means more anomalous. Pixel maps are the squared
//! reconstruction residual, the absolute input gradients of the ELBO, of
//! the KL-term and of the reconstruction term, and the product of the
//! KL-gradient map with the residual map.
//!
//! Scoring decodes the posterior mean unless Monte-Carlo averaging is
//! requested through [`ScoringOptions::mc_samples`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::vae::{build_elbo, VaeParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleScores {
    /// `-L`
    pub neg_elbo: f64,
    pub kl: f64,
    /// Negative reconstruction term.
    pub neg_rec: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PixelMethod {
    RecError,
    ElboGrad,
    KlGrad,
    RecGrad,
    Combi,
}

impl PixelMethod {
    pub const ALL: [PixelMethod; 5] = [
        PixelMethod::RecError,
        PixelMethod::ElboGrad,
        PixelMethod::KlGrad,
        PixelMethod::RecGrad,
        PixelMethod::Combi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PixelMethod::RecError => "rec_error",
            PixelMethod::ElboGrad => "elbo_grad",
            PixelMethod::KlGrad => "kl_grad",
            PixelMethod::RecGrad => "rec_grad",
            PixelMethod::Combi => "combi",
        }
    }
}

impl fmt::Display for PixelMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PixelMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PixelMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod {
                name: s.to_string(),
                valid: PixelMethod::ALL.map(PixelMethod::name).join(", "),
            })
    }
}

/// Scalar whose input gradient is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradTerm {
    Elbo,
    Kl,
    Rec,
}

/// Non-negative per-pixel scores of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelScoreMap {
    pub method: PixelMethod,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Signed input gradients of one image: `elbo = -kl + rec` up to rounding.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedGradients {
    pub elbo: Vec<f64>,
    pub kl: Vec<f64>,
    pub rec: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub samples: Vec<SampleScores>,
    pub gradients: Vec<SignedGradients>,
    /// Pixel maps per method, one per image in input order.
    pub maps: BTreeMap<PixelMethod, Vec<PixelScoreMap>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoringOptions {
    pub batch_size: usize,
    /// `0` decodes the posterior mean; `n > 0` averages every score over
    /// `n` reparameterized samples.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            batch_size: 256,
            mc_samples: 0,
            seed: 0,
        }
    }
}

/// Row-major stack of equally sized images.
#[derive(Clone, Copy, Debug)]
pub struct Images<'a> {
    pub pixels: &'a [f64],
    pub height: usize,
    pub width: usize,
}

impl<'a> Images<'a> {
    pub fn new(pixels: &'a [f64], height: usize, width: usize) -> Self {
        Self { pixels, height, width }
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / (self.height * self.width).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<'a> From<&'a crate::data::ImageDataset> for Images<'a> {
    fn from(d: &'a crate::data::ImageDataset) -> Self {
        Images::new(d.images(), d.height(), d.width())
    }
}

impl<'a> From<&'a crate::data::AnomalyCorpus> for Images<'a> {
    fn from(d: &'a crate::data::AnomalyCorpus) -> Self {
        Images::new(d.images(), d.height(), d.width())
    }
}

struct Chunk {
    samples: Vec<SampleScores>,
    residual2: Vec<f64>,
    grads: Option<[Vec<f64>; 3]>,
}

fn score_chunk(x: Tensor, params: &VaeParams, c: f64, eps: Option<Tensor>, with_grads: bool) -> Result<Chunk> {
    let mut g = Graph::new();
    let xv = if with_grads { g.variable(x) } else { g.constant(x) };
    let vars = params.attach(&mut g, false);
    let ev = eps.map(|e| g.constant(e));
    let n = build_elbo(&mut g, xv, &vars, ev, c)?;

    let samples = g
        .value(n.kl_rows)
        .data()
        .iter()
        .zip(g.value(n.rec_rows).data())
        .map(|(&kl, &rec)| SampleScores {
            neg_elbo: kl - rec,
            kl,
            neg_rec: -rec,
        })
        .collect();
    let residual2 = g
        .value(xv)
        .data()
        .iter()
        .zip(g.value(n.x_hat).data())
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    let grads = if with_grads {
        let take = |root| -> Result<Vec<f64>> {
            let mut gr = g.backward_retained(root)?;
            Ok(gr.remove(xv).expect("input is a variable").into_data())
        };
        Some([take(n.elbo)?, take(n.kl)?, take(n.rec)?])
    } else {
        None
    };
    Ok(Chunk {
        samples,
        residual2,
        grads,
    })
}

struct Accumulated {
    samples: Vec<SampleScores>,
    residual2: Vec<f64>,
    grads: Option<[Vec<f64>; 3]>,
}

fn run(images: Images<'_>, params: &VaeParams, c: f64, opts: &ScoringOptions, with_grads: bool) -> Result<Accumulated> {
    let d = images.height * images.width;
    if d != params.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "score",
            left: vec![images.height, images.width],
            right: vec![params.input_dim()],
        });
    }
    let n = images.len();
    let mut out = Accumulated {
        samples: Vec::with_capacity(n),
        residual2: Vec::with_capacity(n * d),
        grads: with_grads.then(|| [Vec::with_capacity(n * d), Vec::with_capacity(n * d), Vec::with_capacity(n * d)]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let latent = params.latent_dim();
    let step = opts.batch_size.max(1);
    for start in (0..n).step_by(step) {
        let m = step.min(n - start);
        let x = Tensor::matrix(m, d, images.pixels[start * d..(start + m) * d].to_vec())?;
        let chunk = if opts.mc_samples == 0 {
            score_chunk(x, params, c, None, with_grads)?
        } else {
            let draws = opts.mc_samples;
            let mut sum: Option<Chunk> = None;
            for _ in 0..draws {
                let eps: Vec<f64> = (0..m * latent).map(|_| rng.sample(StandardNormal)).collect();
                let next = score_chunk(x.clone(), params, c, Some(Tensor::matrix(m, latent, eps)?), with_grads)?;
                sum = Some(match sum {
                    None => next,
                    Some(acc) => add_chunks(acc, next),
                });
            }
            scale_chunk(sum.expect("at least one draw"), 1.0 / draws as f64)
        };
        out.samples.extend(chunk.samples);
        out.residual2.extend(chunk.residual2);
        if let (Some(dst), Some(src)) = (out.grads.as_mut(), chunk.grads) {
            for (d, s) in dst.iter_mut().zip(src) {
                d.extend(s);
            }
        }
    }
    Ok(out)
}

fn add_chunks(mut a: Chunk, b: Chunk) -> Chunk {
    for (x, y) in a.samples.iter_mut().zip(b.samples) {
        x.neg_elbo += y.neg_elbo;
        x.kl += y.kl;
        x.neg_rec += y.neg_rec;
    }
    a.residual2.iter_mut().zip(b.residual2).for_each(|(x, y)| *x += y);
    if let (Some(ga), Some(gb)) = (a.grads.as_mut(), b.grads) {
        for (x, y) in ga.iter_mut().zip(gb) {
            x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
        }
    }
    a
}

fn scale_chunk(mut a: Chunk, f: f64) -> Chunk {
    for s in &mut a.samples {
        s.kl *= f;
        s.neg_rec *= f;
        // rebuilt from the averaged terms so the decomposition stays exact
        s.neg_elbo = s.kl + s.neg_rec;
    }
    a.residual2.iter_mut().for_each(|v| *v *= f);
    if let Some(g) = a.grads.as_mut() {
        g.iter_mut().flatten().for_each(|v| *v *= f);
    }
    a
}

fn split_maps(values: &[f64], method: PixelMethod, h: usize, w: usize) -> Vec<PixelScoreMap> {
    values
        .chunks_exact(h * w)
        .map(|v| PixelScoreMap {
            method,
            height: h,
            width: w,
            values: v.to_vec(),
        })
        .collect()
}

/// Negative ELBO, KL-term and negative reconstruction term per image.
pub fn sample_scores(images: Images<'_>, params: &VaeParams, c: f64) -> Result<Vec<SampleScores>> {
    Ok(run(images, params, c, &ScoringOptions::default(), false)?.samples)
}

/// Squared residual between each image and its reconstruction. Depends on
/// the model only, not on `c`.
pub fn pixel_rec_error(images: Images<'_>, params: &VaeParams, c: f64) -> Result<Vec<PixelScoreMap>> {
    let acc = run(images, params, c, &ScoringOptions::default(), false)?;
    Ok(split_maps(&acc.residual2, PixelMethod::RecError, images.height, images.width))
}

/// Absolute input gradient of the ELBO, the KL-term or the reconstruction
/// term.
pub fn pixel_grad_score(images: Images<'_>, params: &VaeParams, c: f64, term: GradTerm) -> Result<Vec<PixelScoreMap>> {
    let acc = run(images, params, c, &ScoringOptions::default(), true)?;
    let [elbo, kl, rec] = acc.grads.expect("gradients requested");
    let (values, method) = match term {
        GradTerm::Elbo => (elbo, PixelMethod::ElboGrad),
        GradTerm::Kl => (kl, PixelMethod::KlGrad),
        GradTerm::Rec => (rec, PixelMethod::RecGrad),
    };
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    Ok(split_maps(&abs, method, images.height, images.width))
}

/// KL-gradient map times reconstruction-error map, without rescaling
/// either factor.
pub fn pixel_combi(images: Images<'_>, params: &VaeParams, c: f64) -> Result<Vec<PixelScoreMap>> {
    let report = score_images(images, params, c, &ScoringOptions::default())?;
    Ok(report.maps.get(&PixelMethod::Combi).cloned().unwrap_or_default())
}

/// Elementwise product of two maps of the same shape.
pub fn combine(kl_grad: &PixelScoreMap, rec_error: &PixelScoreMap) -> Result<PixelScoreMap> {
    if kl_grad.values.len() != rec_error.values.len() {
        return Err(Error::ShapeMismatch {
            op: "combi",
            left: vec![kl_grad.height, kl_grad.width],
            right: vec![rec_error.height, rec_error.width],
        });
    }
    Ok(PixelScoreMap {
        method: PixelMethod::Combi,
        height: kl_grad.height,
        width: kl_grad.width,
        values: kl_grad.values.iter().zip(&rec_error.values).map(|(a, b)| a * b).collect(),
    })
}

/// Sample scores, signed gradients and all five pixel maps from one
/// forward pass per batch.
pub fn score_images(images: Images<'_>, params: &VaeParams, c: f64, opts: &ScoringOptions) -> Result<ScoreReport> {
    let (h, w) = (images.height, images.width);
    let acc = run(images, params, c, opts, true)?;
    let [elbo, kl, rec] = acc.grads.expect("gradients requested");
    let abs = |v: &[f64]| v.iter().map(|x| x.abs()).collect::<Vec<f64>>();
    let kl_abs = abs(&kl);
    let combi: Vec<f64> = kl_abs.iter().zip(&acc.residual2).map(|(a, b)| a * b).collect();

    let mut maps = BTreeMap::new();
    maps.insert(PixelMethod::RecError, split_maps(&acc.residual2, PixelMethod::RecError, h, w));
    maps.insert(PixelMethod::ElboGrad, split_maps(&abs(&elbo), PixelMethod::ElboGrad, h, w));
    maps.insert(PixelMethod::KlGrad, split_maps(&kl_abs, PixelMethod::KlGrad, h, w));
    maps.insert(PixelMethod::RecGrad, split_maps(&abs(&rec), PixelMethod::RecGrad, h, w));
    maps.insert(PixelMethod::Combi, split_maps(&combi, PixelMethod::Combi, h, w));

    let d = h * w;
    let gradients = (0..acc.samples.len())
        .map(|i| SignedGradients {
            elbo: elbo[i * d..(i + 1) * d].to_vec(),
            kl: kl[i * d..(i + 1) * d].to_vec(),
            rec: rec[i * d..(i + 1) * d].to_vec(),
        })
        .collect();
    Ok(ScoreReport {
        samples: acc.samples,
        gradients,
        maps,
    })
}
