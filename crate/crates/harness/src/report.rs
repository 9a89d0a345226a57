//! Per-run metric reports, the results CSV with its summary rows, timing and trace files.
//!
//! Metrics are desk-scale analogs computed on the toy world; every report and row says so in
//! its `metric_set` column.

use std::io::{BufRead, Write};
use std::path::Path;

use noisescale_core::search::{TraceLog, TraceRecord};
use serde::{Deserialize, Serialize};

use crate::config::{Metric, Mode};
use crate::error::{HarnessError, Result};

pub const METRIC_SET: &str = "analog";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: String,
    pub fingerprint: String,
    pub seed: u64,
    pub mode: Mode,
    pub metric_set: String,
    pub subject_consistency: Option<f64>,
    pub temporal_flicker: Option<f64>,
    pub calls: u64,
    pub predicted_calls: u64,
    pub frames: usize,
    pub wall_seconds: f64,
    pub trace: TraceLog,
    pub error: Option<String>,
}

impl MetricsReport {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn metric(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::SubjectConsistency => self.subject_consistency,
            Metric::TemporalFlicker => self.temporal_flicker,
        }
    }
}

/// One line of `results.csv`: `kind` is `run` or `summary`. Run rows leave the `_std` and
/// count columns empty; summary rows leave seed and call columns empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub kind: String,
    pub config: String,
    pub fingerprint: String,
    pub seed: Option<u64>,
    pub mode: String,
    pub metric_set: String,
    pub subject_consistency: Option<f64>,
    pub subject_consistency_std: Option<f64>,
    pub temporal_flicker: Option<f64>,
    pub temporal_flicker_std: Option<f64>,
    pub calls: Option<u64>,
    pub predicted_calls: Option<u64>,
    pub frames: Option<usize>,
    pub runs: Option<usize>,
    pub failed: Option<usize>,
    pub status: String,
}

impl CsvRow {
    fn from_report(r: &MetricsReport) -> Self {
        Self {
            kind: "run".into(),
            config: r.config.clone(),
            fingerprint: r.fingerprint.clone(),
            seed: Some(r.seed),
            mode: r.mode.name().into(),
            metric_set: r.metric_set.clone(),
            subject_consistency: r.subject_consistency,
            subject_consistency_std: None,
            temporal_flicker: r.temporal_flicker,
            temporal_flicker_std: None,
            calls: Some(r.calls),
            predicted_calls: Some(r.predicted_calls),
            frames: Some(r.frames),
            runs: None,
            failed: None,
            status: match &r.error {
                None => "ok".into(),
                Some(e) => format!("error: {e}"),
            },
        }
    }
}

/// Mean and sample standard deviation; a single value has deviation 0.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    Some((mean, std))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub config: String,
    pub fingerprint: String,
    pub mode: Mode,
    pub runs: usize,
    pub failed: usize,
    pub subject_consistency: Option<(f64, f64)>,
    pub temporal_flicker: Option<(f64, f64)>,
}

/// One summary per `(config, fingerprint)`, in order of first appearance. Failed runs are
/// counted but excluded from the statistics.
pub fn summarize(reports: &[MetricsReport]) -> Vec<Summary> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in reports {
        let key = (r.config.as_str(), r.fingerprint.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(config, fingerprint)| {
            let cell: Vec<&MetricsReport> =
                reports.iter().filter(|r| r.config == config && r.fingerprint == fingerprint).collect();
            let ok: Vec<&&MetricsReport> = cell.iter().filter(|r| r.is_ok()).collect();
            let stat = |m: Metric| {
                let xs: Vec<f64> = ok.iter().filter_map(|r| r.metric(m)).collect();
                mean_std(&xs)
            };
            Summary {
                config: config.to_string(),
                fingerprint: fingerprint.to_string(),
                mode: cell[0].mode,
                runs: cell.len(),
                failed: cell.len() - ok.len(),
                subject_consistency: stat(Metric::SubjectConsistency),
                temporal_flicker: stat(Metric::TemporalFlicker),
            }
        })
        .collect()
}

pub fn results_rows(reports: &[MetricsReport]) -> Vec<CsvRow> {
    let mut rows: Vec<CsvRow> = reports.iter().map(CsvRow::from_report).collect();
    for s in summarize(reports) {
        rows.push(CsvRow {
            kind: "summary".into(),
            config: s.config,
            fingerprint: s.fingerprint,
            seed: None,
            mode: s.mode.name().into(),
            metric_set: METRIC_SET.into(),
            subject_consistency: s.subject_consistency.map(|m| m.0),
            subject_consistency_std: s.subject_consistency.map(|m| m.1),
            temporal_flicker: s.temporal_flicker.map(|m| m.0),
            temporal_flicker_std: s.temporal_flicker.map(|m| m.1),
            calls: None,
            predicted_calls: None,
            frames: None,
            runs: Some(s.runs),
            failed: Some(s.failed),
            status: if s.failed == 0 { "ok".into() } else { format!("{} failed", s.failed) },
        });
    }
    rows
}

pub fn write_results_csv(path: impl AsRef<Path>, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for row in results_rows(reports) {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path.as_ref(), e))?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Wall times live apart from `results.csv` so that file stays reproducible.
pub fn write_timing_csv(path: impl AsRef<Path>, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["config", "seed", "wall_seconds"])?;
    for r in reports {
        w.write_record([r.config.clone(), r.seed.to_string(), r.wall_seconds.to_string()])?;
    }
    w.flush().map_err(|e| HarnessError::io(path.as_ref(), e))?;
    Ok(())
}

pub fn write_trace_jsonl(path: impl AsRef<Path>, trace: &TraceLog) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for rec in &trace.records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_trace_jsonl(path: impl AsRef<Path>) -> Result<TraceLog> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut records = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str::<TraceRecord>(&line)?);
        }
    }
    Ok(TraceLog { records })
}
