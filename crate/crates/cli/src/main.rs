use std::path::PathBuf;
use std::process::ExitCode;

use anomaly_elbo::harness::{
    cmd_eval, cmd_score, cmd_sweep, cmd_train, configure_threads, parse_methods, ExperimentConfig, ScoreRequest,
};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

/// Train VAEs and score anomalies with ELBO-, KL- and reconstruction-based
/// criteria.
#[derive(Debug, Parser)]
#[command(name = "anomaly-elbo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on the leave-one-class-out split.
    Train(TrainArgs),
    /// Score images with a trained checkpoint.
    Score(ScoreArgs),
    /// Run a one-axis-at-a-time hyperparameter sweep.
    Sweep(SweepArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_file(&self.config)
            .with_context(|| format!("reading config {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.point.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Number of models to train with consecutive seeds.
    #[arg(long, default_value_t = 1)]
    runs: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Override the config's `n_runs`.
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// IDX image file, optionally gzipped.
    images: PathBuf,
    /// Pixel method (rec_error, elbo_grad, kl_grad, rec_grad, combi) or
    /// `all`. Without it only sample scores are written.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value = "runs/score")]
    out: PathBuf,
    /// Seed of the latent samples when `--mc-samples` is set.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Score only the first N images.
    #[arg(long)]
    limit: Option<usize>,
    /// Write PGM heatmaps for the first N images.
    #[arg(long, default_value_t = 0)]
    heatmaps: usize,
    /// Average over N latent samples instead of decoding the posterior mean.
    #[arg(long, default_value_t = 0)]
    mc_samples: usize,
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = configure_threads()? {
        log::info!("using at most {n} worker threads");
    }
    match cli.command {
        Command::Train(a) => {
            let cfg = a.common.load()?;
            for o in cmd_train(&cfg, &a.common.out, a.runs)? {
                println!(
                    "{}: checkpoint {} (validation loss {:.4})",
                    o.experiment_id,
                    o.checkpoint.display(),
                    o.best_val_loss
                );
            }
        }
        Command::Score(a) => {
            let methods = match &a.method {
                Some(m) => parse_methods(m)?,
                None => Vec::new(),
            };
            let req = ScoreRequest {
                methods,
                limit: a.limit,
                heatmaps: a.heatmaps,
                mc_samples: a.mc_samples,
                seed: a.seed,
            };
            let o = cmd_score(&a.checkpoint, &a.images, &req, &a.out)?;
            println!("scored {} images into {}", o.images, a.out.display());
        }
        Command::Sweep(a) => {
            let mut cfg = a.common.load()?;
            if let Some(r) = a.runs {
                cfg.train.n_runs = r;
            }
            let (outcome, files) = cmd_sweep(&cfg, &a.common.out)?;
            println!("results written to {}", files.results.display());
            let failed: Vec<_> = outcome.failures().collect();
            if !failed.is_empty() {
                for f in &failed {
                    eprintln!("failed: {} ({})", f.id, f.result.as_ref().err().map_or("", String::as_str));
                }
                eprintln!("{} of {} sweep points failed", failed.len(), outcome.records.len());
                return Ok(ExitCode::from(2));
            }
        }
        Command::Eval(a) => {
            let cfg = a.common.load()?;
            let o = cmd_eval(&cfg, &a.checkpoint, &a.common.out)?;
            for r in o.rows.iter().filter(|r| r.metric_name.ends_with("auroc")) {
                println!("{} {} {:.4}", r.score_name, r.metric_name, r.value);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
