use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::Mode;
use super::experiment::MetricsRecord;
use super::HarnessError;

/// One CSV row: aggregates over the seeds sharing a (mode, p, b, metric, kd) key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: Mode,
    pub p: f64,
    pub b: f64,
    pub metric: String,
    pub kd: bool,
    pub runs: usize,
    pub failed: usize,
    pub accuracy_mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub accuracy_std: f64,
    pub selection_flops_mean: f64,
    pub final_flops_mean: f64,
    pub total_flops_mean: f64,
}

fn record_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let io = |source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".record.jsonl")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads every `*.record.jsonl` in `dir`, in file-name order. Each record's
/// FLOPs totals are checked against its components.
pub fn read_records(dir: &Path) -> Result<Vec<MetricsRecord>, HarnessError> {
    let mut out = Vec::new();
    for path in record_files(dir)? {
        let text = fs::read_to_string(&path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |message: String| HarnessError::Record {
                path: path.clone(),
                line: i + 1,
                message,
            };
            let rec: MetricsRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            if !rec.flops.is_consistent(&rec.rounds) {
                return Err(bad("FLOPs totals do not match their components".into()));
            }
            out.push(rec);
        }
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return if xs.is_empty() { f64::NAN } else { 0.0 };
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Aggregates the records in `dir`. Rows are ordered by key; failed runs
/// are counted but excluded from the statistics.
pub fn summarize(dir: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    // p and b are non-negative, so their bit patterns sort like the values
    let mut groups: BTreeMap<(Mode, u64, u64, String, bool), Vec<MetricsRecord>> = BTreeMap::new();
    for rec in read_records(dir)? {
        let key = (rec.mode, rec.p.to_bits(), rec.b.to_bits(), rec.metric.tag().to_string(), rec.kd_enabled);
        groups.entry(key).or_default().push(rec);
    }
    Ok(groups
        .into_iter()
        .map(|((mode, p, b, metric, kd), recs)| {
            let ok: Vec<&MetricsRecord> = recs.iter().filter(|r| r.error.is_none()).collect();
            let acc: Vec<f64> = ok.iter().filter_map(|r| r.final_test_accuracy).collect();
            let flops = |f: fn(&MetricsRecord) -> u64| mean(&ok.iter().map(|r| f(r) as f64).collect::<Vec<_>>());
            SummaryRow {
                mode,
                p: f64::from_bits(p),
                b: f64::from_bits(b),
                metric,
                kd,
                runs: recs.len(),
                failed: recs.len() - ok.len(),
                accuracy_mean: mean(&acc),
                accuracy_std: sample_std(&acc),
                selection_flops_mean: flops(|r| r.flops.selection),
                final_flops_mean: flops(|r| r.flops.final_training),
                total_flops_mean: flops(|r| r.flops.total),
            }
        })
        .collect())
}

/// Writes `summary.csv` into `dir` and returns its rows.
pub fn write_summary(dir: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let rows = summarize(dir)?;
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|source| HarnessError::Io { path, source })?;
    Ok(rows)
}

/// Mean over seeds of `|acc(run) − acc(reference)|`, a test-accuracy proxy
/// for the expected-loss gap between training on a subset and on the full pool.
pub fn selection_gap(runs: &[MetricsRecord], reference: &[MetricsRecord]) -> Result<f64, HarnessError> {
    let mismatch = |m: String| Err(HarnessError::Mismatch(m));
    if runs.is_empty() {
        return mismatch("no runs to compare".into());
    }
    let seeds = |rs: &[MetricsRecord]| rs.iter().map(|r| r.seed).collect::<BTreeSet<_>>();
    if seeds(runs) != seeds(reference) || seeds(runs).len() != runs.len() || reference.len() != runs.len() {
        return mismatch("runs and reference must cover the same seeds once each".into());
    }
    let mut gaps = Vec::with_capacity(runs.len());
    for r in runs {
        let f = reference.iter().find(|f| f.seed == r.seed).expect("seed sets match");
        if r.dataset != f.dataset || r.network != f.network {
            return mismatch(format!("seed {}: {}/{} vs {}/{}", r.seed, r.dataset, r.network, f.dataset, f.network));
        }
        match (r.final_test_accuracy, f.final_test_accuracy) {
            (Some(a), Some(c)) => gaps.push((a - c).abs()),
            _ => return mismatch(format!("seed {} has no final accuracy", r.seed)),
        }
    }
    Ok(mean(&gaps))
}
