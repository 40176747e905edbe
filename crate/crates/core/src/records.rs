//! Append-only line-delimited JSON records.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One metric value for one model (and attribution method, when relevant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub config_hash: String,
    pub model_id: String,
    pub method: Option<String>,
    pub metric: String,
    pub value: f64,
    pub se: Option<f64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl ResultRecord {
    pub fn new(run_id: &str, config_hash: &str, model_id: &str, method: Option<&str>, metric: &str, value: f64, se: Option<f64>) -> Self {
        Self {
            run_id: run_id.to_string(),
            config_hash: config_hash.to_string(),
            model_id: model_id.to_string(),
            method: method.map(str::to_string),
            metric: metric.to_string(),
            value,
            se,
            timestamp: now(),
        }
    }

    /// Equality on everything except the wall-clock field, with bit-exact
    /// float comparison.
    pub fn same_result(&self, other: &Self) -> bool {
        self.run_id == other.run_id
            && self.config_hash == other.config_hash
            && self.model_id == other.model_id
            && self.method == other.method
            && self.metric == other.metric
            && self.value.to_bits() == other.value.to_bits()
            && self.se.map(f64::to_bits) == other.se.map(f64::to_bits)
    }

    pub fn key(&self) -> (String, Option<String>, String) {
        (self.model_id.clone(), self.method.clone(), self.metric.clone())
    }
}

/// Mean perturbation curve of one ordering (or the difference curve).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub run_id: String,
    pub config_hash: String,
    pub model_id: String,
    pub method: String,
    /// `deletion` or `insertion`.
    pub mode: String,
    /// `lerf`, `morf`, `rao` or `difference`.
    pub curve: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRow {
    pub run_id: String,
    pub config_hash: String,
    pub model_id: String,
    pub unit: usize,
    pub concept: usize,
    pub name: String,
    pub category: String,
    pub iou: f64,
}

/// Per-sample alignment scores behind the aggregated records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub run_id: String,
    pub model_id: String,
    pub method: String,
    pub sample: usize,
    pub energy_pg: f64,
    pub ehr: f64,
    pub ehr_raw_auc: f64,
    pub wsol_iou: f64,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn append<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// All rows of a record file; a missing file reads as empty.
pub fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Latest record per (model, method, metric), in first-appearance order.
pub fn latest(records: &[ResultRecord]) -> Vec<ResultRecord> {
    let mut out: Vec<ResultRecord> = Vec::new();
    for r in records {
        match out.iter_mut().find(|o| o.key() == r.key()) {
            Some(o) => *o = r.clone(),
            None => out.push(r.clone()),
        }
    }
    out
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
