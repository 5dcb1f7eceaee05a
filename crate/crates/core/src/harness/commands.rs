//! Implementations of the `train`, `score`, `sweep` and `eval` commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::output::{
    write_history_csv, write_maps_csv, write_pgm, write_results_csv, write_scores_csv, write_summary_csv,
    FileFingerprint, RunManifest, Seeds, Timings,
};
use crate::data::{read_idx_images, rescale, ImageDataset, SplitTag};
use crate::error::{Error, Result};
use crate::eval::{
    auroc_metrics, pixel_experiment, run_sweep, sample_aurocs, summarize, train_point, Benchmark, ResultRow,
    SweepOutcome, SweepPoint, TrainedModel, SCHEMA_VERSION,
};
use crate::scoring::{score_images, Images, PixelMethod, ScoringOptions};
use crate::train::run_seed;

/// Env var capping the worker threads.
pub const THREADS_ENV: &str = "ANOMALY_ELBO_THREADS";

/// Sizes the global rayon pool from [`THREADS_ENV`]. Returns the cap, if any.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool that was already built keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}

fn fingerprints(data_dir: &Path) -> Result<Vec<FileFingerprint>> {
    Benchmark::files(data_dir)?.iter().map(|p| FileFingerprint::of(p)).collect()
}

fn load_benchmark(cfg: &ExperimentConfig) -> Result<(Benchmark, Vec<FileFingerprint>)> {
    let prints = fingerprints(&cfg.data_dir)?;
    let bench = Benchmark::load(&cfg.data_dir)?;
    Ok((bench, prints))
}

fn checkpoint_of(model: &TrainedModel, height: usize, width: usize) -> Checkpoint {
    Checkpoint {
        config: model.config.clone(),
        height,
        width,
        final_val_loss: model.best_val_loss,
        params: model.params.clone(),
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub experiment_id: String,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub manifest: PathBuf,
    pub best_val_loss: f64,
}

/// Trains `runs` models (seeds `seed`, `seed + 1`, ...) on the
/// leave-one-class-out split and writes `<id>.ckpt`, `<id>.history.csv`
/// and `<id>.manifest.json` per run into `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, runs: usize) -> Result<Vec<TrainOutput>> {
    cfg.validate()?;
    let (bench, prints) = load_benchmark(cfg)?;
    let mut outputs = Vec::with_capacity(runs);
    for r in 0..runs.max(1) {
        let start = Instant::now();
        let point = SweepPoint {
            seed: run_seed(cfg.point.seed, r),
            ..cfg.point
        };
        let id = point.id();
        let (model, test) = train_point(&bench, &point, &cfg.train, &cfg.options)?;
        let ckpt = out.join(format!("{id}.ckpt"));
        let history = out.join(format!("{id}.history.csv"));
        let manifest = out.join(format!("{id}.manifest.json"));
        checkpoint_of(&model, test.height(), test.width()).save(&ckpt)?;
        write_history_csv(&history, &model.history)?;
        RunManifest {
            experiment_id: id.clone(),
            command: "train".into(),
            config_hash: cfg.hash(),
            config: cfg.canonical(),
            seeds: Seeds::new(point.seed),
            datasets: prints.clone(),
            outputs: vec![ckpt.clone(), history.clone()],
            timings: Timings {
                total_seconds: start.elapsed().as_secs_f64(),
            },
            error: None,
            schema_version: SCHEMA_VERSION,
        }
        .write(&manifest)?;
        log::info!("{id}: best validation loss {:.4}", model.best_val_loss);
        outputs.push(TrainOutput {
            experiment_id: id,
            checkpoint: ckpt,
            history,
            manifest,
            best_val_loss: model.best_val_loss,
        });
    }
    Ok(outputs)
}

#[derive(Clone, Debug, Default)]
pub struct ScoreRequest {
    /// Pixel methods to export; empty writes sample scores only.
    pub methods: Vec<PixelMethod>,
    /// Score only the first `n` images.
    pub limit: Option<usize>,
    /// Write PGM heatmaps for the first `n` images of each method.
    pub heatmaps: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ScoreOutput {
    pub images: usize,
    pub scores: PathBuf,
    pub maps: Vec<PathBuf>,
    pub heatmaps: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Parses `all` or a single method name.
pub fn parse_methods(name: &str) -> Result<Vec<PixelMethod>> {
    if name == "all" {
        Ok(PixelMethod::ALL.to_vec())
    } else {
        Ok(vec![name.parse()?])
    }
}

/// Images of an IDX file at the resolution the checkpoint expects.
fn images_for(ck: &Checkpoint, path: &Path, limit: Option<usize>) -> Result<ImageDataset> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let (n, h, w, bytes) = read_idx_images(path)?;
    let n = limit.map_or(n, |l| l.min(n));
    let pixels = bytes[..n * h * w].iter().map(|&b| b as f64 / 255.0).collect();
    let data = ImageDataset::new(pixels, vec![0; n], h, w, SplitTag::Test)?;
    if (h, w) == (ck.height, ck.width) {
        return Ok(data);
    }
    let resized = rescale(&data, ck.height as f64 / h as f64)?;
    if (resized.height(), resized.width()) != (ck.height, ck.width) {
        return Err(Error::ShapeMismatch {
            op: "score",
            left: vec![h, w],
            right: vec![ck.height, ck.width],
        });
    }
    log::info!("rescaled {h}x{w} images to {}x{}", ck.height, ck.width);
    Ok(resized)
}

/// Scores the images of an IDX file with a checkpoint. Writes
/// `scores.csv`, one `maps_<method>.csv` per requested method and
/// optionally `heatmaps/<method>_<i>.pgm`.
pub fn cmd_score(checkpoint: &Path, images: &Path, req: &ScoreRequest, out: &Path) -> Result<ScoreOutput> {
    let start = Instant::now();
    let ck = Checkpoint::load(checkpoint)?;
    let data = images_for(&ck, images, req.limit)?;
    let opts = ScoringOptions {
        mc_samples: req.mc_samples,
        seed: req.seed,
        ..Default::default()
    };
    let report = score_images(Images::from(&data), &ck.params, ck.config.c, &opts)?;
    let scores = out.join("scores.csv");
    write_scores_csv(&scores, &report.samples)?;
    let mut maps = Vec::new();
    let mut heatmaps = Vec::new();
    for &m in &req.methods {
        let per_image = &report.maps[&m];
        let path = out.join(format!("maps_{}.csv", m.name()));
        write_maps_csv(&path, per_image)?;
        maps.push(path);
        for (i, map) in per_image.iter().take(req.heatmaps).enumerate() {
            let p = out.join("heatmaps").join(format!("{}_{i}.pgm", m.name()));
            write_pgm(&p, map)?;
            heatmaps.push(p);
        }
    }
    let manifest = out.join("score.manifest.json");
    let mut outputs = vec![scores.clone()];
    outputs.extend(maps.iter().cloned());
    outputs.extend(heatmaps.iter().cloned());
    RunManifest {
        experiment_id: format!("score_seed{}", ck.config.seed),
        command: "score".into(),
        config_hash: super::config::hex_digest(&ck.to_bytes()),
        config: format!(
            "checkpoint = {}\nmc_samples = {}\nseed = {}\n",
            checkpoint.display(),
            req.mc_samples,
            req.seed
        ),
        seeds: Seeds::new(req.seed),
        datasets: vec![FileFingerprint::of(images)?],
        outputs,
        timings: Timings {
            total_seconds: start.elapsed().as_secs_f64(),
        },
        error: None,
        schema_version: SCHEMA_VERSION,
    }
    .write(&manifest)?;
    Ok(ScoreOutput {
        images: data.len(),
        scores,
        maps,
        heatmaps,
        manifest,
    })
}

#[derive(Clone, Debug)]
pub struct SweepFiles {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub manifests: Vec<PathBuf>,
}

/// Runs the configured sweep and writes `results.csv`, `summary.csv`, and
/// per experiment `manifests/<id>.json`, `histories/<id>.csv` and, if
/// requested, `checkpoints/<id>.ckpt`. Failed points are logged, get a
/// manifest with the error, and leave no rows.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(SweepOutcome, SweepFiles)> {
    cfg.validate()?;
    let (bench, prints) = load_benchmark(cfg)?;
    let outcome = run_sweep(&bench, &cfg.sweep_spec(), &cfg.train, &cfg.options)?;
    let mut manifests = Vec::new();
    for rec in &outcome.records {
        let mut outputs = vec![out.join("results.csv")];
        if let Ok(res) = &rec.result {
            let hist = out.join("histories").join(format!("{}.csv", rec.id));
            write_history_csv(&hist, &res.loco.model.history)?;
            outputs.push(hist);
            if cfg.save_checkpoints {
                let p = out.join("checkpoints").join(format!("{}.ckpt", rec.id));
                checkpoint_of(&res.loco.model, res.loco.test.height(), res.loco.test.width()).save(&p)?;
                outputs.push(p);
            }
        }
        let path = out.join("manifests").join(format!("{}.json", rec.id));
        RunManifest {
            experiment_id: rec.id.clone(),
            command: "sweep".into(),
            config_hash: cfg.hash(),
            config: cfg.canonical(),
            seeds: Seeds::new(rec.point.seed),
            datasets: prints.clone(),
            outputs,
            timings: Timings {
                total_seconds: rec.seconds,
            },
            error: rec.result.as_ref().err().cloned(),
            schema_version: SCHEMA_VERSION,
        }
        .write(&path)?;
        manifests.push(path);
    }
    let results = out.join("results.csv");
    let summary = out.join("summary.csv");
    write_results_csv(&results, &outcome.rows)?;
    write_summary_csv(&summary, &summarize(&outcome.rows))?;
    Ok((
        outcome,
        SweepFiles {
            results,
            summary,
            manifests,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub rows: Vec<ResultRow>,
    pub results: PathBuf,
    pub manifest: PathBuf,
}

/// Evaluates a trained checkpoint on the benchmark's test split: sample
/// AUROCs and, when `pixel` is set in the config, the pixel experiment.
/// The config must describe the checkpoint's sweep point; its seed is
/// taken from the checkpoint. Writes `eval.csv` and `eval.manifest.json`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<EvalOutput> {
    let start = Instant::now();
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    let point = SweepPoint {
        seed: ck.config.seed,
        ..cfg.point
    };
    if ck.config.latent_dim != point.latent_dim || ck.config.c != point.c() {
        return Err(Error::InvalidConfig(format!(
            "checkpoint has latent_dim {} and c {}, config asks for {} and {}",
            ck.config.latent_dim,
            ck.config.c,
            point.latent_dim,
            point.c()
        )));
    }
    let (bench, prints) = load_benchmark(cfg)?;
    point.validate(bench.test.num_classes())?;
    let test = rescale(&bench.test, point.scale_factor)?;
    if (test.height(), test.width()) != (ck.height, ck.width) {
        return Err(Error::ShapeMismatch {
            op: "eval",
            left: vec![test.height(), test.width()],
            right: vec![ck.height, ck.width],
        });
    }
    let aurocs = sample_aurocs(&ck.params, ck.config.c, &test, point.held_out_class, point.seed)?;
    let mut metrics = auroc_metrics(&aurocs);
    if cfg.pixel {
        metrics.extend(pixel_experiment(&ck.params, ck.config.c, &test, &point, &cfg.options)?.metrics());
    }
    let id = point.id();
    let rows: Vec<ResultRow> = metrics
        .into_iter()
        .map(|(score_name, metric_name, value)| ResultRow {
            experiment_id: id.clone(),
            axis: "default".into(),
            axis_value: String::new(),
            run_seed: point.seed,
            score_name,
            metric_name,
            value,
        })
        .collect();
    let results = out.join("eval.csv");
    write_results_csv(&results, &rows)?;
    let manifest = out.join("eval.manifest.json");
    RunManifest {
        experiment_id: id,
        command: "eval".into(),
        config_hash: cfg.hash(),
        config: cfg.canonical(),
        seeds: Seeds::new(point.seed),
        datasets: prints,
        outputs: vec![results.clone()],
        timings: Timings {
            total_seconds: start.elapsed().as_secs_f64(),
        },
        error: None,
        schema_version: SCHEMA_VERSION,
    }
    .write(&manifest)?;
    Ok(EvalOutput {
        rows,
        results,
        manifest,
    })
}
