use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use super::experiment::{run_experiment, Benchmark, ExperimentOptions, ExperimentResult, SweepPoint};
use crate::error::{Error, Result};
use crate::train::{run_seed, TrainConfig};

/// Version of the results table layout, written as its last column.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    LatentDim,
    LogC,
    Scale,
    HeldOutClass,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::LatentDim, Axis::LogC, Axis::Scale, Axis::HeldOutClass];

    pub fn name(self) -> &'static str {
        match self {
            Axis::LatentDim => "latent_dim",
            Axis::LogC => "log_c",
            Axis::Scale => "scale",
            Axis::HeldOutClass => "held_out_class",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &SweepPoint, value: f64) -> Result<SweepPoint> {
        let integral = |what: &str| -> Result<u64> {
            if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as u64)
            } else {
                Err(Error::InvalidConfig(format!("{what} must be a non-negative integer, got {value}")))
            }
        };
        let mut p = *base;
        match self {
            Axis::LatentDim => p.latent_dim = integral("latent_dim")? as usize,
            Axis::LogC => p.log_c = value,
            Axis::Scale => p.scale_factor = value,
            Axis::HeldOutClass => {
                p.held_out_class = u8::try_from(integral("held_out_class")?)
                    .map_err(|_| Error::InvalidConfig(format!("held_out_class {value} out of range")))?
            }
        }
        Ok(p)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepAxis {
    pub axis: Axis,
    pub values: Vec<f64>,
}

/// One-axis-at-a-time sweep around `defaults`, repeated for `runs` seeds
/// derived from `base_seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axes: Vec<SweepAxis>,
    pub defaults: SweepPoint,
    pub base_seed: u64,
    pub runs: usize,
    pub pixel: bool,
}

impl SweepSpec {
    /// The axes and values of the default sample-wise study.
    pub fn default_axes() -> Vec<SweepAxis> {
        vec![
            SweepAxis {
                axis: Axis::LatentDim,
                values: vec![2.0, 20.0, 256.0],
            },
            SweepAxis {
                axis: Axis::LogC,
                values: vec![-1.0, 0.0, 1.4],
            },
            SweepAxis {
                axis: Axis::Scale,
                values: vec![0.5, 1.0],
            },
        ]
    }

    /// Sweep entries in emission order. With no axes the defaults form a
    /// single entry on axis `default`.
    pub fn entries(&self) -> Result<Vec<SweepEntry>> {
        let mut out = Vec::new();
        for run in 0..self.runs {
            let seed = run_seed(self.base_seed, run);
            let base = SweepPoint { seed, ..self.defaults };
            if self.axes.is_empty() {
                out.push(SweepEntry {
                    axis: "default".into(),
                    axis_value: String::new(),
                    point: base,
                });
            }
            for ax in &self.axes {
                for &v in &ax.values {
                    out.push(SweepEntry {
                        axis: ax.axis.name().into(),
                        axis_value: v.to_string(),
                        point: ax.axis.apply(&base, v)?,
                    });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub axis: String,
    pub axis_value: String,
    pub point: SweepPoint,
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub experiment_id: String,
    pub axis: String,
    pub axis_value: String,
    pub run_seed: u64,
    pub score_name: String,
    pub metric_name: String,
    pub value: f64,
}

/// An executed sweep point. Points shared between axes run once.
#[derive(Debug)]
pub struct ExperimentRecord {
    pub id: String,
    pub point: SweepPoint,
    pub result: std::result::Result<ExperimentResult, String>,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub records: Vec<ExperimentRecord>,
    pub rows: Vec<ResultRow>,
}

impl SweepOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &ExperimentRecord> {
        self.records.iter().filter(|r| r.result.is_err())
    }
}

/// Runs every distinct point of `spec` through `job` in parallel and
/// assembles the results table. A failing point is recorded and skipped.
pub fn run_sweep_with<F>(spec: &SweepSpec, job: F) -> Result<SweepOutcome>
where
    F: Fn(&SweepPoint) -> Result<ExperimentResult> + Sync,
{
    let entries = spec.entries()?;
    let mut unique: Vec<SweepPoint> = Vec::new();
    for e in &entries {
        if !unique.iter().any(|p| p.id() == e.point.id()) {
            unique.push(e.point);
        }
    }
    let records: Vec<ExperimentRecord> = unique
        .par_iter()
        .map(|p| {
            let start = Instant::now();
            let result = job(p).map_err(|e| {
                log::warn!("{} failed: {e}", p.id());
                e.to_string()
            });
            ExperimentRecord {
                id: p.id(),
                point: *p,
                result,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    let by_id: BTreeMap<&str, &ExperimentRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut rows = Vec::new();
    for e in &entries {
        let id = e.point.id();
        if let Ok(res) = &by_id[id.as_str()].result {
            for (score_name, metric_name, value) in res.metrics() {
                rows.push(ResultRow {
                    experiment_id: id.clone(),
                    axis: e.axis.clone(),
                    axis_value: e.axis_value.clone(),
                    run_seed: e.point.seed,
                    score_name,
                    metric_name,
                    value,
                });
            }
        }
    }
    Ok(SweepOutcome { records, rows })
}

/// Runs the sweep on a benchmark.
pub fn run_sweep(
    bench: &Benchmark,
    spec: &SweepSpec,
    tconf: &TrainConfig,
    opts: &ExperimentOptions,
) -> Result<SweepOutcome> {
    run_sweep_with(spec, |p| run_experiment(bench, p, tconf, opts, spec.pixel))
}

/// Mean, min and max of a metric per `(axis, axis_value, score, metric)`
/// over runs.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let key = (r.axis.clone(), r.axis_value.clone(), r.score_name.clone(), r.metric_name.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r.value);
    }
    order
        .into_iter()
        .map(|key| {
            let vals = &groups[&key];
            let n = vals.len();
            SummaryRow {
                axis: key.0,
                axis_value: key.1,
                score_name: key.2,
                metric_name: key.3,
                mean: vals.iter().sum::<f64>() / n as f64,
                min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                runs: n,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub axis: String,
    pub axis_value: String,
    pub score_name: String,
    pub metric_name: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub runs: usize,
}
