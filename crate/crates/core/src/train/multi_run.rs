use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::Result;

/// Seed of run `index` derived from a base seed.
pub fn run_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub result: Result<BTreeMap<String, f64>>,
}

#[derive(Debug)]
pub struct RunAggregate {
    pub runs: Vec<RunOutcome>,
    pub summary: BTreeMap<String, MetricSummary>,
    pub failures: usize,
}

/// Mean, min and max of every metric over the given runs. A metric missing
/// from some runs is summarized over the runs that report it.
pub fn aggregate<'a>(runs: impl IntoIterator<Item = &'a BTreeMap<String, f64>>) -> BTreeMap<String, MetricSummary> {
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in runs {
        for (k, &v) in run {
            acc.entry(k.clone()).or_default().push(v);
        }
    }
    acc.into_iter()
        .map(|(k, vals)| {
            let count = vals.len();
            let mean = vals.iter().sum::<f64>() / count as f64;
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (k, MetricSummary { mean, min, max, count })
        })
        .collect()
}

/// Runs `job` once per derived seed, in parallel, and aggregates the
/// metrics of the successful runs. Run order in the result follows the run
/// index regardless of scheduling.
pub fn multi_run<F>(base_seed: u64, n_runs: usize, job: F) -> RunAggregate
where
    F: Fn(u64) -> Result<BTreeMap<String, f64>> + Sync,
{
    let runs: Vec<RunOutcome> = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let seed = run_seed(base_seed, i);
            RunOutcome {
                seed,
                result: job(seed),
            }
        })
        .collect();
    let failures = runs.iter().filter(|r| r.result.is_err()).count();
    for r in runs.iter() {
        if let Err(e) = &r.result {
            log::warn!("run with seed {} failed: {e}", r.seed);
        }
    }
    let summary = aggregate(runs.iter().filter_map(|r| r.result.as_ref().ok()));
    RunAggregate {
        runs,
        summary,
        failures,
    }
}
