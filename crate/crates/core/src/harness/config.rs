//! Flat `key = value` experiment configuration.
//!
//! Lines are UTF-8, `#` starts a comment, blank lines are ignored and every
//! key may appear at most once. Unset keys keep their defaults. Sweep axes
//! are comma-separated lists, e.g. `sweep_latent_dim = 2, 20, 256`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{Axis, ExperimentOptions, SweepAxis, SweepPoint, SweepSpec};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Directory holding the four IDX files. Relative paths are resolved
    /// against the directory of the config file.
    pub data_dir: PathBuf,
    pub point: SweepPoint,
    pub train: TrainConfig,
    pub options: ExperimentOptions,
    pub sweep_axes: Vec<SweepAxis>,
    /// Also run the pixel experiment in `sweep` and `eval`.
    pub pixel: bool,
    /// Write one checkpoint per sweep experiment.
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data/fashion-mnist"),
            point: SweepPoint::default(),
            train: TrainConfig::default(),
            options: ExperimentOptions::default(),
            sweep_axes: Vec::new(),
            pixel: true,
            save_checkpoints: false,
        }
    }
}

const KEYS: &[&str] = &[
    "data_dir",
    "train_subset",
    "latent_dim",
    "hidden_dim",
    "c",
    "log_c",
    "scale",
    "held_out_class",
    "seed",
    "initial_lr",
    "plateau_factor",
    "patience_epochs",
    "batch_size",
    "max_epochs",
    "beta1",
    "beta2",
    "eps_adam",
    "n_runs",
    "val_fraction",
    "scoring_batch",
    "corruption_rate",
    "patch_min_frac",
    "patch_max_frac",
    "patch_blend",
    "calibration_fraction",
    "pixel",
    "save_checkpoints",
    "sweep_latent_dim",
    "sweep_log_c",
    "sweep_scale",
    "sweep_held_out_class",
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| Error::ConfigValue {
        key: key.to_string(),
        msg: format!("cannot parse {raw:?}: {e}"),
    })
}

fn list(key: &str, raw: &str) -> Result<Vec<f64>> {
    let vals = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value::<f64>(key, s))
        .collect::<Result<Vec<f64>>>()?;
    if vals.is_empty() {
        return Err(Error::ConfigValue {
            key: key.to_string(),
            msg: "empty list".into(),
        });
    }
    Ok(vals)
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::ConfigValue {
        key: key.to_string(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    /// Parses config text. Relative `data_dir` values stay relative.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut c_given = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, raw) = content.split_once('=').ok_or_else(|| Error::ConfigSyntax {
                line: line_no,
                msg: format!("expected `key = value`, got {content:?}"),
            })?;
            let (key, raw) = (key.trim(), raw.trim());
            if !KEYS.contains(&key) {
                return Err(Error::UnknownKey(key.to_string()));
            }
            if seen.iter().any(|k| k == key) {
                return Err(Error::ConfigSyntax {
                    line: line_no,
                    msg: format!("key `{key}` given twice"),
                });
            }
            seen.push(key.to_string());
            let p = &mut cfg.point;
            let t = &mut cfg.train;
            let o = &mut cfg.options;
            match key {
                "data_dir" => cfg.data_dir = PathBuf::from(raw),
                "train_subset" => o.train_subset = Some(value(key, raw)?),
                "latent_dim" => p.latent_dim = value(key, raw)?,
                "hidden_dim" => o.hidden_dim = value(key, raw)?,
                "c" | "log_c" => {
                    if let Some(other) = c_given {
                        return Err(Error::ConfigSyntax {
                            line: line_no,
                            msg: format!("`{key}` conflicts with `{other}`; give only one"),
                        });
                    }
                    c_given = Some(key);
                    let v: f64 = value(key, raw)?;
                    if key == "c" {
                        if !(v > 0.0 && v.is_finite()) {
                            return Err(bad(key, format!("must be positive, got {v}")));
                        }
                        p.log_c = v.ln();
                    } else {
                        p.log_c = v;
                    }
                }
                "scale" => p.scale_factor = value(key, raw)?,
                "held_out_class" => p.held_out_class = value(key, raw)?,
                "seed" => p.seed = value(key, raw)?,
                "initial_lr" => t.initial_lr = value(key, raw)?,
                "plateau_factor" => t.plateau_factor = value(key, raw)?,
                "patience_epochs" => t.patience_epochs = value(key, raw)?,
                "batch_size" => t.batch_size = value(key, raw)?,
                "max_epochs" => t.max_epochs = value(key, raw)?,
                "beta1" => t.beta1 = value(key, raw)?,
                "beta2" => t.beta2 = value(key, raw)?,
                "eps_adam" => t.eps_adam = value(key, raw)?,
                "n_runs" => t.n_runs = value(key, raw)?,
                "val_fraction" => o.val_fraction = value(key, raw)?,
                "scoring_batch" => o.scoring_batch = value(key, raw)?,
                "corruption_rate" => o.anomalies.corruption_rate = value(key, raw)?,
                "patch_min_frac" => o.anomalies.min_side_frac = value(key, raw)?,
                "patch_max_frac" => o.anomalies.max_side_frac = value(key, raw)?,
                "patch_blend" => o.anomalies.blend = value(key, raw)?,
                "calibration_fraction" => o.calibration_fraction = value(key, raw)?,
                "pixel" => cfg.pixel = value(key, raw)?,
                "save_checkpoints" => cfg.save_checkpoints = value(key, raw)?,
                _ => {
                    let axis: Axis = key.trim_start_matches("sweep_").parse()?;
                    cfg.sweep_axes.push(SweepAxis {
                        axis,
                        values: list(key, raw)?,
                    });
                }
            }
        }
        cfg.sweep_axes.sort_by_key(|a| a.axis);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a config file, resolving a relative `data_dir`
    /// against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if cfg.data_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.point;
        if p.latent_dim == 0 {
            return Err(bad("latent_dim", "must be at least 1"));
        }
        if self.options.hidden_dim == 0 {
            return Err(bad("hidden_dim", "must be at least 1"));
        }
        if !p.log_c.is_finite() {
            return Err(bad("log_c", "must be finite"));
        }
        if !(p.scale_factor > 0.0 && p.scale_factor.is_finite()) {
            return Err(bad("scale", "must be positive"));
        }
        let o = &self.options;
        if !(o.val_fraction > 0.0 && o.val_fraction < 1.0) {
            return Err(bad("val_fraction", "must lie in (0, 1)"));
        }
        if !(o.calibration_fraction > 0.0 && o.calibration_fraction < 1.0) {
            return Err(bad("calibration_fraction", "must lie in (0, 1)"));
        }
        if o.scoring_batch == 0 {
            return Err(bad("scoring_batch", "must be at least 1"));
        }
        if o.train_subset == Some(0) {
            return Err(bad("train_subset", "must be at least 1"));
        }
        let a = &o.anomalies;
        if !(0.0..=1.0).contains(&a.corruption_rate) {
            return Err(bad("corruption_rate", "must lie in [0, 1]"));
        }
        if !(a.min_side_frac > 0.0 && a.min_side_frac <= a.max_side_frac && a.max_side_frac <= 1.0) {
            return Err(bad("patch_min_frac", "need 0 < patch_min_frac <= patch_max_frac <= 1"));
        }
        if !(a.blend > 0.0 && a.blend <= 1.0) {
            return Err(bad("patch_blend", "must lie in (0, 1]"));
        }
        self.train.validate()?;
        for ax in &self.sweep_axes {
            for &v in &ax.values {
                ax.axis.apply(&self.point, v)?.validate(256)?;
            }
        }
        Ok(())
    }

    /// Canonical text listing every effective setting in a fixed order.
    /// Parsing it yields the same config.
    pub fn canonical(&self) -> String {
        let p = &self.point;
        let t = &self.train;
        let o = &self.options;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("data_dir", self.data_dir.display().to_string());
        if let Some(n) = o.train_subset {
            put("train_subset", n.to_string());
        }
        put("latent_dim", p.latent_dim.to_string());
        put("hidden_dim", o.hidden_dim.to_string());
        put("log_c", p.log_c.to_string());
        put("scale", p.scale_factor.to_string());
        put("held_out_class", p.held_out_class.to_string());
        put("seed", p.seed.to_string());
        put("initial_lr", t.initial_lr.to_string());
        put("plateau_factor", t.plateau_factor.to_string());
        put("patience_epochs", t.patience_epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("max_epochs", t.max_epochs.to_string());
        put("beta1", t.beta1.to_string());
        put("beta2", t.beta2.to_string());
        put("eps_adam", t.eps_adam.to_string());
        put("n_runs", t.n_runs.to_string());
        put("val_fraction", o.val_fraction.to_string());
        put("scoring_batch", o.scoring_batch.to_string());
        put("corruption_rate", o.anomalies.corruption_rate.to_string());
        put("patch_min_frac", o.anomalies.min_side_frac.to_string());
        put("patch_max_frac", o.anomalies.max_side_frac.to_string());
        put("patch_blend", o.anomalies.blend.to_string());
        put("calibration_fraction", o.calibration_fraction.to_string());
        put("pixel", self.pixel.to_string());
        put("save_checkpoints", self.save_checkpoints.to_string());
        for ax in &self.sweep_axes {
            let vals: Vec<String> = ax.values.iter().map(f64::to_string).collect();
            put(&format!("sweep_{}", ax.axis.name()), vals.join(", "));
        }
        s
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        hex_digest(self.canonical().as_bytes())
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            axes: self.sweep_axes.clone(),
            defaults: self.point,
            base_seed: self.point.seed,
            runs: self.train.n_runs,
            pixel: self.pixel,
        }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
