use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{auroc, calibrate_threshold, mean_dice, LabeledScores, ScoredMask};
use crate::data::{
    load_idx, loco_split, make_anomaly_corpus, rescale, AnomalyCorpus, AnomalyParams, ImageDataset, SplitTag,
};
use crate::error::{Error, Result};
use crate::scoring::{sample_scores, score_images, Images, PixelMethod, ScoringOptions};
use crate::train::{fit, EpochRecord, TrainConfig};
use crate::vae::{VaeConfig, VaeParams};

// Independent random streams derived from a run seed. Streams 0 and 1 are
// taken by initialization and training.
pub const STREAM_TEST_POOL: u64 = 2;
pub const STREAM_ANOMALIES: u64 = 3;
pub const STREAM_CALIBRATION: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Train and test portions of an image benchmark.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub train: ImageDataset,
    pub test: ImageDataset,
}

/// Locates an IDX file, accepting the uncompressed and the `.gz` name.
fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if plain.is_file() {
        Ok(plain)
    } else if gz.is_file() {
        Ok(gz)
    } else {
        Err(Error::MissingFile(gz))
    }
}

impl Benchmark {
    /// Paths of the train images, train labels, test images and test
    /// labels in `dir`.
    pub fn files(dir: &Path) -> Result<[PathBuf; 4]> {
        Ok([
            find_idx(dir, "train-images-idx3-ubyte")?,
            find_idx(dir, "train-labels-idx1-ubyte")?,
            find_idx(dir, "t10k-images-idx3-ubyte")?,
            find_idx(dir, "t10k-labels-idx1-ubyte")?,
        ])
    }

    /// Loads the four standard IDX files (`train-images-idx3-ubyte`, ...,
    /// optionally gzipped) from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let [tri, trl, tei, tel] = Self::files(dir)?;
        let train = load_idx(&tri, &trl)?;
        let mut test = load_idx(&tei, &tel)?;
        test.split = SplitTag::Test;
        if (train.height(), train.width()) != (test.height(), test.width()) {
            return Err(Error::Dataset("train and test images differ in size".into()));
        }
        Ok(Self { train, test })
    }
}

/// One configuration of the leave-one-class-out experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub latent_dim: usize,
    /// Natural logarithm of the decoder variance `c`.
    pub log_c: f64,
    pub scale_factor: f64,
    pub held_out_class: u8,
    pub seed: u64,
}

impl Default for SweepPoint {
    fn default() -> Self {
        Self {
            latent_dim: 20,
            log_c: 0.0,
            scale_factor: 1.0,
            held_out_class: 0,
            seed: 0,
        }
    }
}

impl SweepPoint {
    pub fn c(&self) -> f64 {
        self.log_c.exp()
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be at least 1".into()));
        }
        if !self.log_c.is_finite() {
            return Err(Error::InvalidConfig(format!("log_c must be finite, got {}", self.log_c)));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scale_factor must be positive, got {}",
                self.scale_factor
            )));
        }
        if self.held_out_class as usize >= num_classes {
            return Err(Error::InvalidConfig(format!(
                "held_out_class {} outside the {num_classes} classes of the dataset",
                self.held_out_class
            )));
        }
        Ok(())
    }

    /// Stable identifier, e.g. `lat20_logc1.4_scale1_class5_seed0`.
    pub fn id(&self) -> String {
        format!(
            "lat{}_logc{}_scale{}_class{}_seed{}",
            self.latent_dim, self.log_c, self.scale_factor, self.held_out_class, self.seed
        )
    }
}

/// Settings shared by every experiment of a study.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOptions {
    pub hidden_dim: usize,
    pub val_fraction: f64,
    /// Train on the first `n` training images only.
    pub train_subset: Option<usize>,
    pub scoring_batch: usize,
    pub anomalies: AnomalyParams,
    /// Fraction of the anomaly corpus used to calibrate the Dice threshold.
    pub calibration_fraction: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            hidden_dim: 400,
            val_fraction: 0.1,
            train_subset: None,
            scoring_batch: 256,
            anomalies: AnomalyParams::default(),
            calibration_fraction: 0.2,
        }
    }
}

/// A model trained on the leave-one-class-out split of one sweep point.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: VaeConfig,
    pub params: VaeParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub truncated: bool,
}

/// Sample-wise AUROC of each score; keys `neg_elbo`, `kl`, `neg_rec`.
#[derive(Clone, Debug)]
pub struct LocoResult {
    pub aurocs: BTreeMap<String, f64>,
    pub model: TrainedModel,
    /// Test images at the sweep point's scale.
    pub test: ImageDataset,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelMetrics {
    pub pixel_auroc: f64,
    /// Mean Dice on the held-back 4/5 at the calibrated threshold.
    pub dice: f64,
    pub threshold: f64,
    pub calibration_dice: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelResult {
    pub methods: BTreeMap<PixelMethod, PixelMetrics>,
    pub images: usize,
    pub anomalous_images: usize,
    pub calibration_images: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub loco: LocoResult,
    pub pixel: Option<PixelResult>,
}

/// `(score_name, metric_name, value)`
pub type Metric = (String, String, f64);

/// Sample-wise AUROCs as metric triples.
pub fn auroc_metrics(aurocs: &BTreeMap<String, f64>) -> Vec<Metric> {
    aurocs.iter().map(|(k, &v)| (k.clone(), "auroc".to_string(), v)).collect()
}

impl PixelResult {
    pub fn metrics(&self) -> Vec<Metric> {
        let mut out = Vec::new();
        for (method, pm) in &self.methods {
            let name = method.name().to_string();
            out.push((name.clone(), "pixel_auroc".into(), pm.pixel_auroc));
            out.push((name.clone(), "dice".into(), pm.dice));
            out.push((name.clone(), "dice_threshold".into(), pm.threshold));
            out.push((name, "calibration_dice".into(), pm.calibration_dice));
        }
        out
    }
}

impl ExperimentResult {
    /// Sample AUROCs, training summary and pixel metrics.
    pub fn metrics(&self) -> Vec<Metric> {
        let mut out = auroc_metrics(&self.loco.aurocs);
        let m = &self.loco.model;
        out.push(("train".into(), "best_val_loss".into(), m.best_val_loss));
        out.push(("train".into(), "best_epoch".into(), m.best_epoch as f64));
        out.push(("train".into(), "epochs".into(), m.history.len() as f64));
        if let Some(px) = &self.pixel {
            out.extend(px.metrics());
        }
        out
    }
}

/// Rescales the benchmark and trains a model on all classes but the held-out one.
pub fn train_point(
    bench: &Benchmark,
    point: &SweepPoint,
    tconf: &TrainConfig,
    opts: &ExperimentOptions,
) -> Result<(TrainedModel, ImageDataset)> {
    point.validate(bench.train.num_classes().max(bench.test.num_classes()))?;
    let train_all = match opts.train_subset {
        Some(n) => bench.train.take(n),
        None => bench.train.clone(),
    };
    let train_all = rescale(&train_all, point.scale_factor)?;
    let test = rescale(&bench.test, point.scale_factor)?;
    let split = loco_split(&train_all, point.held_out_class, opts.val_fraction, point.seed)?;
    let config = VaeConfig {
        input_dim: train_all.pixels(),
        hidden_dim: opts.hidden_dim,
        latent_dim: point.latent_dim,
        c: point.c(),
        seed: point.seed,
    };
    log::info!(
        "{}: training on {} images, validating on {}",
        point.id(),
        split.train.len(),
        split.val.len()
    );
    let outcome = fit(&config, tconf, &split.train, &split.val)?;
    let model = TrainedModel {
        config,
        params: outcome.params,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        truncated: outcome.truncated,
    };
    Ok((model, test))
}

/// Test pool of the sample-wise evaluation: every held-out-class test
/// image (label 1) and an equally sized seeded draw of the other test
/// images (label 0).
pub fn sample_test_pool(test: &ImageDataset, held_out_class: u8, seed: u64) -> Result<(ImageDataset, Vec<u8>)> {
    let positives = test.indices_of_class(held_out_class);
    let others: Vec<usize> = (0..test.len()).filter(|&i| test.labels()[i] != held_out_class).collect();
    if positives.is_empty() || others.is_empty() {
        return Err(Error::SingleClass {
            positives: positives.len(),
            negatives: others.len(),
        });
    }
    let mut rng = stream(seed, STREAM_TEST_POOL);
    let k = positives.len().min(others.len());
    let mut negatives: Vec<usize> = others.choose_multiple(&mut rng, k).copied().collect();
    negatives.sort_unstable();
    let mut indices = positives.clone();
    indices.extend(&negatives);
    let labels = positives.iter().map(|_| 1).chain(negatives.iter().map(|_| 0)).collect();
    Ok((test.subset(&indices, SplitTag::Test), labels))
}

/// Sample-wise AUROC of the negative ELBO, the KL-term and the negative
/// reconstruction term on the test pool.
pub fn sample_aurocs(
    params: &VaeParams,
    c: f64,
    test: &ImageDataset,
    held_out_class: u8,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let (pool, labels) = sample_test_pool(test, held_out_class, seed)?;
    let scores = sample_scores(Images::from(&pool), params, c)?;
    let mut out = BTreeMap::new();
    type Column = fn(&crate::scoring::SampleScores) -> f64;
    let columns: [(&str, Column); 3] = [
        ("neg_elbo", |s| s.neg_elbo),
        ("kl", |s| s.kl),
        ("neg_rec", |s| s.neg_rec),
    ];
    for (name, get) in columns {
        let ls = LabeledScores::new(scores.iter().map(get).collect(), labels.clone())?;
        out.insert(name.to_string(), auroc(&ls)?);
    }
    Ok(out)
}

/// Trains on the leave-one-class-out split and reports sample-wise AUROCs.
pub fn loco_experiment(
    bench: &Benchmark,
    point: &SweepPoint,
    tconf: &TrainConfig,
    opts: &ExperimentOptions,
) -> Result<LocoResult> {
    let (model, test) = train_point(bench, point, tconf, opts)?;
    let aurocs = sample_aurocs(&model.params, model.config.c, &test, point.held_out_class, point.seed)?;
    log::info!("{}: sample AUROC {:?}", point.id(), aurocs);
    Ok(LocoResult { aurocs, model, test })
}

/// Synthetic anomaly corpus: in-class test images corrupted with patches
/// from held-out-class test images.
pub fn anomaly_corpus(
    test: &ImageDataset,
    held_out_class: u8,
    params: &AnomalyParams,
    seed: u64,
) -> Result<AnomalyCorpus> {
    let clean_idx: Vec<usize> = (0..test.len()).filter(|&i| test.labels()[i] != held_out_class).collect();
    let donors = test.subset(&test.indices_of_class(held_out_class), SplitTag::Test);
    let clean = test.subset(&clean_idx, SplitTag::Test);
    make_anomaly_corpus(&clean, &donors, params, &mut stream(seed, STREAM_ANOMALIES))
}

/// Splits image indices into calibration and evaluation parts, stratified
/// by image label so both parts keep the anomalous share.
pub fn calibration_split(image_labels: &[u8], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream(seed, STREAM_CALIBRATION);
    let (mut calib, mut rest) = (Vec::new(), Vec::new());
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..image_labels.len()).filter(|&i| image_labels[i] == label).collect();
        idx.shuffle(&mut rng);
        let k = (fraction * idx.len() as f64).round() as usize;
        calib.extend_from_slice(&idx[..k]);
        rest.extend_from_slice(&idx[k..]);
    }
    calib.sort_unstable();
    rest.sort_unstable();
    (calib, rest)
}

/// Evaluates per-pixel maps against masks: pooled pixel AUROC over all
/// images, Dice threshold calibrated on `calib` and reported on `rest`.
pub fn evaluate_maps(maps: &[&[f64]], masks: &[&[bool]], calib: &[usize], rest: &[usize]) -> Result<PixelMetrics> {
    let scores: Vec<f64> = maps.iter().flat_map(|m| m.iter().copied()).collect();
    let labels: Vec<u8> = masks.iter().flat_map(|m| m.iter().map(|&b| b as u8)).collect();
    let pixel_auroc = auroc(&LabeledScores::new(scores, labels)?)?;
    let pick = |idx: &[usize]| -> Vec<ScoredMask<'_>> {
        idx.iter()
            .map(|&i| ScoredMask {
                scores: maps[i],
                mask: masks[i],
            })
            .collect()
    };
    let cal = calibrate_threshold(&pick(calib))?;
    let dice = mean_dice(&pick(rest), cal.threshold)?;
    Ok(PixelMetrics {
        pixel_auroc,
        dice,
        threshold: cal.threshold,
        calibration_dice: cal.dice,
    })
}

/// Scores a synthetic anomaly corpus with all five pixel methods.
pub fn pixel_experiment(
    params: &VaeParams,
    c: f64,
    test: &ImageDataset,
    point: &SweepPoint,
    opts: &ExperimentOptions,
) -> Result<PixelResult> {
    let corpus = anomaly_corpus(test, point.held_out_class, &opts.anomalies, point.seed)?;
    let scoring = ScoringOptions {
        batch_size: opts.scoring_batch,
        ..Default::default()
    };
    let report = score_images(Images::from(&corpus), params, c, &scoring)?;
    let (calib, rest) = calibration_split(corpus.image_labels(), opts.calibration_fraction, point.seed);
    let masks: Vec<&[bool]> = (0..corpus.len()).map(|i| corpus.mask(i)).collect();
    let mut methods = BTreeMap::new();
    for (method, maps) in &report.maps {
        let maps: Vec<&[f64]> = maps.iter().map(|m| m.values.as_slice()).collect();
        methods.insert(*method, evaluate_maps(&maps, &masks, &calib, &rest)?);
    }
    log::info!(
        "{}: pixel AUROC {:?}",
        point.id(),
        methods.iter().map(|(m, v)| (m.name(), v.pixel_auroc)).collect::<Vec<_>>()
    );
    Ok(PixelResult {
        methods,
        images: corpus.len(),
        anomalous_images: corpus.image_labels().iter().filter(|&&l| l == 1).count(),
        calibration_images: calib.len(),
    })
}

/// Leave-one-class-out experiment, optionally followed by the pixel
/// experiment on the same model.
pub fn run_experiment(
    bench: &Benchmark,
    point: &SweepPoint,
    tconf: &TrainConfig,
    opts: &ExperimentOptions,
    with_pixel: bool,
) -> Result<ExperimentResult> {
    let loco = loco_experiment(bench, point, tconf, opts)?;
    let pixel = if with_pixel {
        Some(pixel_experiment(&loco.model.params, loco.model.config.c, &loco.test, point, opts)?)
    } else {
        None
    };
    Ok(ExperimentResult { loco, pixel })
}
