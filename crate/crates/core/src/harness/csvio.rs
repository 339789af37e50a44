//! Row types of every CSV the harness writes, and their readers.
//!
//! | file             | header                                                                 |
//! |------------------|------------------------------------------------------------------------|
//! | `run.csv`        | `step,coverage_a,coverage_b,mixing`                                    |
//! | `snap_<s>.csv`   | `id,swarm,x,y,fsm_state`                                               |
//! | `agg.csv`        | `step` then `mean_`, `min_`, `max_` of each metric                     |
//! | `sweep.csv`      | `n_a,n_b,coverage_a,coverage_b,mixing`                                 |
//! | `train_log.csv`  | `step,epsilon,loss,episode_return_mean,coverage_a,coverage_b,mixing`   |
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! gives the exact values that were written.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::metrics::TickMetrics;
use crate::train::TrainLogRow;
use crate::Error;

pub const RUN_HEADER: &str = "step,coverage_a,coverage_b,mixing";
pub const SNAPSHOT_HEADER: &str = "id,swarm,x,y,fsm_state";
pub const AGG_HEADER: &str = "step,mean_coverage_a,min_coverage_a,max_coverage_a,\
mean_coverage_b,min_coverage_b,max_coverage_b,mean_mixing,min_mixing,max_mixing";
pub const SWEEP_HEADER: &str = "n_a,n_b,coverage_a,coverage_b,mixing";
pub const TRAIN_LOG_HEADER: &str = "step,epsilon,loss,episode_return_mean,coverage_a,coverage_b,mixing";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub step: u64,
    pub coverage_a: f64,
    pub coverage_b: f64,
    pub mixing: f64,
}

impl From<TickMetrics> for RunRow {
    fn from(m: TickMetrics) -> Self {
        Self {
            step: m.step,
            coverage_a: m.coverage_a,
            coverage_b: m.coverage_b,
            mixing: m.mixing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub id: usize,
    pub swarm: String,
    pub x: f64,
    pub y: f64,
    pub fsm_state: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub step: u64,
    pub mean_coverage_a: f64,
    pub min_coverage_a: f64,
    pub max_coverage_a: f64,
    pub mean_coverage_b: f64,
    pub min_coverage_b: f64,
    pub max_coverage_b: f64,
    pub mean_mixing: f64,
    pub min_mixing: f64,
    pub max_mixing: f64,
}

/// Means over replications of the metrics at the final step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_a: usize,
    pub n_b: usize,
    pub coverage_a: f64,
    pub coverage_b: f64,
    pub mixing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogCsvRow {
    pub step: u64,
    pub epsilon: f64,
    /// Empty before the first update.
    pub loss: Option<f32>,
    pub episode_return_mean: f64,
    pub coverage_a: f64,
    pub coverage_b: f64,
    pub mixing: f64,
}

impl From<&TrainLogRow> for TrainLogCsvRow {
    fn from(r: &TrainLogRow) -> Self {
        Self {
            step: r.step,
            epsilon: r.epsilon,
            loss: r.loss,
            episode_return_mean: r.episode_return_mean,
            coverage_a: r.coverage_a,
            coverage_b: r.coverage_b,
            mixing: r.mixing,
        }
    }
}

/// Serializes rows to CSV text, header included.
pub fn to_csv_string<T: Serialize>(rows: &[T], header: &str) -> Result<String, Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header.split(','))
        .map_err(|e| Error::Parse(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &str) -> Result<(), Error> {
    let text = to_csv_string(rows, header)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses CSV text whose header must be exactly `header`. Errors name the
/// 1-based data row at fault; a file with no data rows is an error.
pub fn parse_csv<T: DeserializeOwned>(text: &str, header: &str, source: &str) -> Result<Vec<T>, Error> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let found = r
        .headers()
        .map_err(|e| Error::Parse(format!("{source}: header: {e}")))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if found.is_empty() {
        return Err(Error::Parse(format!("{source}: empty file")));
    }
    if found != header {
        return Err(Error::Parse(format!(
            "{source}: header is {found:?}, expected {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let row: T = rec.map_err(|e| Error::Parse(format!("{source}: row {}: {}", i + 1, csv_reason(&e))))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{source}: no data rows")));
    }
    Ok(rows)
}

fn csv_reason(e: &csv::Error) -> String {
    match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    }
}

pub fn read_csv<T: DeserializeOwned>(path: &Path, header: &str) -> Result<Vec<T>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, header, &path.display().to_string())
}

/// First line of a file, used to tell the CSV kinds apart.
pub fn read_header(path: &Path) -> Result<String, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().next().unwrap_or("").trim_end_matches('\r').to_string())
}
