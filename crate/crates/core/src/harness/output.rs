//! Result files. Every file is written to a temporary sibling and renamed
//! into place, so readers never see a partial file.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{ResultRow, SummaryRow, SCHEMA_VERSION};
use crate::scoring::{PixelScoreMap, SampleScores};
use crate::train::EpochRecord;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn csv_bytes<F>(path: &Path, header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let wrap = |e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        };
        w.write_record(header).map_err(wrap)?;
        fill(&mut w).map_err(wrap)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(buf)
}

pub const RESULT_COLUMNS: [&str; 8] = [
    "experiment_id",
    "axis",
    "axis_value",
    "run_seed",
    "score_name",
    "metric_name",
    "value",
    "schema_version",
];

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let version = SCHEMA_VERSION.to_string();
    let bytes = csv_bytes(path, &RESULT_COLUMNS, |w| {
        for r in rows {
            w.write_record([
                r.experiment_id.as_str(),
                &r.axis,
                &r.axis_value,
                &r.run_seed.to_string(),
                &r.score_name,
                &r.metric_name,
                &r.value.to_string(),
                &version,
            ])?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Parses a results table written by [`write_results_csv`].
pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let wrap = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(wrap)?;
        let field = |i: usize| rec.get(i).unwrap_or("").to_string();
        let num_err = |what: &str| Error::Dataset(format!("{}: bad {what} in results row", path.display()));
        rows.push(ResultRow {
            experiment_id: field(0),
            axis: field(1),
            axis_value: field(2),
            run_seed: field(3).parse().map_err(|_| num_err("run_seed"))?,
            score_name: field(4),
            metric_name: field(5),
            value: field(6).parse().map_err(|_| num_err("value"))?,
        });
    }
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let version = SCHEMA_VERSION.to_string();
    let header = [
        "axis",
        "axis_value",
        "score_name",
        "metric_name",
        "mean",
        "min",
        "max",
        "runs",
        "schema_version",
    ];
    let bytes = csv_bytes(path, &header, |w| {
        for r in rows {
            w.write_record([
                r.axis.as_str(),
                &r.axis_value,
                &r.score_name,
                &r.metric_name,
                &r.mean.to_string(),
                &r.min.to_string(),
                &r.max.to_string(),
                &r.runs.to_string(),
                &version,
            ])?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let version = SCHEMA_VERSION.to_string();
    let header = ["epoch", "train_loss", "val_loss", "lr", "schema_version"];
    let bytes = csv_bytes(path, &header, |w| {
        for h in history {
            w.write_record([
                h.epoch.to_string(),
                h.train_loss.to_string(),
                h.val_loss.to_string(),
                h.lr.to_string(),
                version.clone(),
            ])?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

pub fn write_scores_csv(path: &Path, scores: &[SampleScores]) -> Result<()> {
    let version = SCHEMA_VERSION.to_string();
    let header = ["image", "neg_elbo", "kl", "neg_rec", "schema_version"];
    let bytes = csv_bytes(path, &header, |w| {
        for (i, s) in scores.iter().enumerate() {
            w.write_record([
                i.to_string(),
                s.neg_elbo.to_string(),
                s.kl.to_string(),
                s.neg_rec.to_string(),
                version.clone(),
            ])?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// One row per image: index, height, width, then the row-major map values
/// at full precision.
pub fn write_maps_csv(path: &Path, maps: &[PixelScoreMap]) -> Result<()> {
    let d = maps.first().map_or(0, |m| m.values.len());
    let mut header: Vec<String> = ["image", "height", "width"].map(String::from).to_vec();
    header.extend((0..d).map(|p| format!("p{p}")));
    header.push("schema_version".into());
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let version = SCHEMA_VERSION.to_string();
    let bytes = csv_bytes(path, &header_ref, |w| {
        for (i, m) in maps.iter().enumerate() {
            let mut rec = vec![i.to_string(), m.height.to_string(), m.width.to_string()];
            rec.extend(m.values.iter().map(f64::to_string));
            rec.push(version.clone());
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Binary PGM of a map, min-max normalized to 0..=255. This is a lossy
/// visualization; a constant map renders black.
pub fn pgm_bytes(map: &PixelScoreMap) -> Vec<u8> {
    let lo = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.values.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm(path: &Path, map: &PixelScoreMap) -> Result<()> {
    write_atomic(path, &pgm_bytes(map))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileFingerprint {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileFingerprint {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: super::config::hex_digest(&bytes),
            bytes: bytes.len() as u64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Seeds {
    pub run_seed: u64,
    /// ChaCha8 stream ids derived from the run seed.
    pub init_stream: u64,
    pub train_stream: u64,
    pub test_pool_stream: u64,
    pub anomaly_stream: u64,
    pub calibration_stream: u64,
}

impl Seeds {
    pub fn new(run_seed: u64) -> Self {
        Self {
            run_seed,
            init_stream: 0,
            train_stream: 1,
            test_pool_stream: crate::eval::STREAM_TEST_POOL,
            anomaly_stream: crate::eval::STREAM_ANOMALIES,
            calibration_stream: crate::eval::STREAM_CALIBRATION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timings {
    pub total_seconds: f64,
}

/// Provenance of one experiment's outputs. Results rows carry the
/// manifest's `experiment_id`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub experiment_id: String,
    pub command: String,
    pub config_hash: String,
    pub config: String,
    pub seeds: Seeds,
    pub datasets: Vec<FileFingerprint>,
    pub outputs: Vec<PathBuf>,
    pub timings: Timings,
    pub error: Option<String>,
    pub schema_version: u32,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self).expect("manifest fields serialize");
        json.push(b'\n');
        write_atomic(path, &json)
    }
}
