//! Per-iteration summaries of replicated traces.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Summary schema version written to `summary.json`.
pub const SUMMARY_VERSION: u32 = 1;

/// Empirical quantile with linear interpolation between order statistics
/// (position `(n − 1) p` in the sorted sample).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean with the 25th and 75th percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub p25: f64,
    pub p75: f64,
}

impl Band {
    pub fn of(values: &[f64]) -> Band {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Band {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p25: percentile(&sorted, 0.25),
            p75: percentile(&sorted, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub iter: usize,
    pub replicates: usize,
    pub coverage: Option<Band>,
    pub gap: Option<Band>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub version: u32,
    pub rows: Vec<SummaryRow>,
}

/// The metric columns of one trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMetrics {
    pub method: String,
    pub replicate: usize,
    pub coverage: Vec<Option<f64>>,
    pub gap: Vec<Option<f64>>,
}

fn parse_opt(s: &str, path: &Path) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| CliError::Aggregate(format!("{}: bad number `{s}`", path.display())))
}

pub fn read_trace(path: &Path) -> Result<TraceMetrics> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Aggregate(format!("{}: missing column `{name}`", path.display())))
    };
    let (c_rep, c_method, c_iter, c_cov, c_gap) = (
        col("replicate")?,
        col("method")?,
        col("iter")?,
        col("coverage")?,
        col("gap")?,
    );
    let mut out = TraceMetrics {
        method: String::new(),
        replicate: 0,
        coverage: Vec::new(),
        gap: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let method = &rec[c_method];
        let replicate: usize = rec[c_rep]
            .parse()
            .map_err(|_| CliError::Aggregate(format!("{}: bad replicate", path.display())))?;
        if i == 0 {
            out.method = method.to_string();
            out.replicate = replicate;
        } else if method != out.method || replicate != out.replicate {
            return Err(CliError::Aggregate(format!(
                "{}: mixes methods or replicates",
                path.display()
            )));
        }
        if rec[c_iter] != (i + 1).to_string() {
            return Err(CliError::Aggregate(format!(
                "{}: row {} has iter {}",
                path.display(),
                i + 1,
                &rec[c_iter]
            )));
        }
        out.coverage.push(parse_opt(&rec[c_cov], path)?);
        out.gap.push(parse_opt(&rec[c_gap], path)?);
    }
    if out.coverage.is_empty() {
        return Err(CliError::Aggregate(format!("{}: empty trace", path.display())));
    }
    Ok(out)
}

/// Trace files (`*.csv`) under `dir`, sorted by name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

fn band_at(
    traces: &[&TraceMetrics],
    iter: usize,
    pick: fn(&TraceMetrics) -> &Vec<Option<f64>>,
) -> Result<Option<Band>> {
    let vals: Vec<Option<f64>> = traces.iter().map(|t| pick(t)[iter]).collect();
    if vals.iter().all(Option::is_none) {
        return Ok(None);
    }
    let present: Vec<f64> = vals.iter().flatten().copied().collect();
    if present.len() != vals.len() {
        return Err(CliError::Aggregate(format!(
            "iteration {} has a metric in some traces but not others",
            iter + 1
        )));
    }
    Ok(Some(Band::of(&present)))
}

/// Per-method, per-iteration bands across replicates. All traces must have
/// the same length.
pub fn summarize(traces: &[TraceMetrics]) -> Result<SummaryTable> {
    let Some(first) = traces.first() else {
        return Err(CliError::Aggregate("no traces".into()));
    };
    let n = first.coverage.len();
    if let Some(t) = traces.iter().find(|t| t.coverage.len() != n) {
        return Err(CliError::Aggregate(format!(
            "mixed budgets: {} replicate {} has {} rows, expected {n}",
            t.method,
            t.replicate,
            t.coverage.len()
        )));
    }
    let mut by_method: BTreeMap<&str, Vec<&TraceMetrics>> = BTreeMap::new();
    for t in traces {
        by_method.entry(&t.method).or_default().push(t);
    }
    let mut rows = Vec::new();
    for (method, mut group) in by_method {
        group.sort_by_key(|t| t.replicate);
        if group.windows(2).any(|w| w[0].replicate == w[1].replicate) {
            return Err(CliError::Aggregate(format!("{method}: duplicate replicate")));
        }
        for iter in 0..n {
            rows.push(SummaryRow {
                method: method.to_string(),
                iter: iter + 1,
                replicates: group.len(),
                coverage: band_at(&group, iter, |t| &t.coverage)?,
                gap: band_at(&group, iter, |t| &t.gap)?,
            });
        }
    }
    Ok(SummaryTable {
        version: SUMMARY_VERSION,
        rows,
    })
}

/// Reads every trace CSV in `dir` and summarizes it.
pub fn aggregate(dir: &Path) -> Result<SummaryTable> {
    let files = trace_files(dir)?;
    if files.is_empty() {
        return Err(CliError::Aggregate(format!("no trace files in {}", dir.display())));
    }
    let traces = files.iter().map(|f| read_trace(f)).collect::<Result<Vec<_>>>()?;
    summarize(&traces)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SummaryTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "method",
            "iter",
            "replicates",
            "coverage_mean",
            "coverage_p25",
            "coverage_p75",
            "gap_mean",
            "gap_p25",
            "gap_p75",
        ])?;
        for r in &self.rows {
            let (c, g) = (r.coverage, r.gap);
            w.write_record([
                r.method.clone(),
                r.iter.to_string(),
                r.replicates.to_string(),
                opt(c.map(|b| b.mean)),
                opt(c.map(|b| b.p25)),
                opt(c.map(|b| b.p75)),
                opt(g.map(|b| b.mean)),
                opt(g.map(|b| b.p25)),
                opt(g.map(|b| b.p75)),
            ])?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    /// Rows of one method, in iteration order.
    pub fn method(&self, name: &str) -> Vec<&SummaryRow> {
        self.rows.iter().filter(|r| r.method == name).collect()
    }

    /// Row of `method` at the last iteration.
    pub fn last(&self, name: &str) -> Option<&SummaryRow> {
        self.method(name).into_iter().last()
    }
}
