//! Replicated experiment runner.

use std::fs;
use std::path::{Path, PathBuf};

use edu_core::benchmarks::Benchmark;
use edu_core::bo::{run_bo, LoopConfig, Trace};
use edu_core::metrics::{coverage_curve, optimization_gap, sf_metrics, GroundTruth};
use edu_core::optimizer::lhs;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::summary::{aggregate, SummaryTable};

/// Command-line overrides of a config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
    /// Record wall-clock times in the traces (breaks byte-identical reruns).
    pub timing: bool,
}

/// A (replicate, method) run that stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replicate: usize,
    pub method: String,
    pub evaluations: usize,
    pub error: String,
}

/// Final metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub replicate: usize,
    pub method: String,
    pub evaluations: usize,
    pub f_min: f64,
    pub coverage: Option<f64>,
    pub gap: Option<f64>,
    pub n_tolerable: Option<usize>,
    pub sf1: Option<f64>,
    pub sf2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub summary: SummaryTable,
    pub finals: Vec<FinalMetrics>,
    pub failures: Vec<Failure>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `stream` in replicate `replicate`. Stream 0 is the shared
/// initial design; method `m` uses stream `m + 1`.
pub fn mix_seed(base: u64, replicate: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ replicate) ^ stream)
}

/// The initial design shared by every method of a replicate.
pub fn shared_design(base: u64, replicate: usize, n_init: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(base, replicate as u64, 0));
    lhs(n_init, dim, &mut rng)
}

fn trace_name(method: &str, replicate: usize) -> String {
    format!("{method}_r{replicate:04}.csv")
}

fn write_trace(
    path: &Path,
    replicate: usize,
    method: &str,
    trace: &Trace,
    gt: Option<&GroundTruth>,
    f_star: Option<f64>,
) -> Result<()> {
    let d = trace.records.first().map_or(0, |r| r.point.len());
    let points = trace.points();
    let values = trace.values();
    let coverage = gt.map(|g| coverage_curve(&points, &values, g));
    let gap = f_star.map(|f| optimization_gap(&values, f));
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["replicate", "method", "iter", "batch_index"]
        .map(String::from)
        .to_vec();
    header.extend((1..=d).map(|j| format!("x_{j}")));
    header.extend(["f", "f_min", "gamma_n", "coverage", "gap", "wall_ms"].map(String::from));
    w.write_record(&header)?;
    for (i, r) in trace.records.iter().enumerate() {
        let mut row = vec![
            replicate.to_string(),
            method.to_string(),
            r.eval.to_string(),
            r.round.to_string(),
        ];
        row.extend(r.point.iter().map(|v| v.to_string()));
        row.push(r.value.to_string());
        row.push(r.f_min.to_string());
        row.push(r.gamma_n.to_string());
        row.push(coverage.as_ref().map(|c| c[i].to_string()).unwrap_or_default());
        row.push(gap.as_ref().map(|g| g[i].to_string()).unwrap_or_default());
        row.push(r.wall_ms.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

fn final_metrics(
    replicate: usize,
    method: &str,
    trace: &Trace,
    bench: &Benchmark,
    gt: Option<&GroundTruth>,
    sf_candidates: usize,
) -> Result<FinalMetrics> {
    let points = trace.points();
    let values = trace.values();
    let f_min = trace.f_min().unwrap_or(f64::NAN);
    let reference = bench.f_star.or(bench.lower_bound);
    let basket = reference.map(|r| trace.tolerable_points(r));
    let (sf1, sf2) = match &basket {
        Some(b) if !b.is_empty() && sf_candidates > 0 => {
            let (a, c) = sf_metrics(b, bench.dim, None, sf_candidates)?;
            (Some(a), Some(c))
        }
        _ => (None, None),
    };
    Ok(FinalMetrics {
        replicate,
        method: method.to_string(),
        evaluations: trace.len(),
        f_min,
        coverage: gt.map(|g| edu_core::metrics::coverage_rate(&points, &values, g)),
        gap: bench.f_star.map(|f| f_min - f),
        n_tolerable: basket.map(|b| b.len()),
        sf1,
        sf2,
    })
}

fn write_finals(path: &Path, finals: &[FinalMetrics]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "replicate",
        "method",
        "evaluations",
        "f_min",
        "coverage",
        "gap",
        "n_tolerable",
        "sf1",
        "sf2",
    ])?;
    for f in finals {
        w.write_record([
            f.replicate.to_string(),
            f.method.clone(),
            f.evaluations.to_string(),
            f.f_min.to_string(),
            opt(f.coverage),
            opt(f.gap),
            f.n_tolerable.map(|n| n.to_string()).unwrap_or_default(),
            opt(f.sf1),
            opt(f.sf2),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

enum Outcome {
    Done(FinalMetrics),
    Failed(Failure),
}

/// Runs every (replicate, method) cell, writes one trace CSV per completed
/// run plus `final.csv`, `summary.csv` and `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory; set `out_dir` or pass --out".into()))?;
    let base_seed = opts.seed.unwrap_or(cfg.seed);
    let bench = cfg.benchmark.build()?;
    let dim = bench.dim;
    let epsilon = cfg.resolve_epsilon(&bench)?;
    let n_init = cfg.n_init_for(dim);
    let gt = if bench.f_star.is_some() && !bench.minimizers.is_empty() {
        Some(GroundTruth::with_resolution(
            &bench,
            epsilon,
            cfg.metrics.flood_fill_resolution,
        )?)
    } else {
        None
    };
    let specs = cfg.specs();
    let labels = cfg.labels();
    let optimizer = cfg.optimizer_for(dim);
    for spec in &specs {
        let probe = LoopConfig {
            optimizer,
            fit_restarts: cfg.fit_restarts,
            ..LoopConfig::new(dim, cfg.n_total, *spec, epsilon, 0).with_n_init(n_init)
        };
        probe.validate(dim)?;
    }

    let trace_dir = out_dir.join("traces");
    let failed_dir = out_dir.join("failed");
    create_dir(&trace_dir)?;

    let designs: Vec<Vec<Vec<f64>>> = (0..cfg.replicates)
        .map(|r| shared_design(base_seed, r, n_init, dim))
        .collect();
    let tasks: Vec<(usize, usize)> = (0..cfg.replicates)
        .flat_map(|r| (0..specs.len()).map(move |m| (r, m)))
        .collect();

    let run_one = |&(r, m): &(usize, usize)| -> Result<Outcome> {
        let label = &labels[m];
        let loop_cfg = LoopConfig {
            optimizer,
            fit_restarts: cfg.fit_restarts,
            record_timing: opts.timing,
            ..LoopConfig::new(
                dim,
                cfg.n_total,
                specs[m],
                epsilon,
                mix_seed(base_seed, r as u64, m as u64 + 1),
            )
            .with_initial_design(designs[r].clone())
        };
        match run_bo(|x| bench.eval(x), dim, &loop_cfg) {
            Ok(trace) => {
                write_trace(
                    &trace_dir.join(trace_name(label, r)),
                    r,
                    label,
                    &trace,
                    gt.as_ref(),
                    bench.f_star,
                )?;
                let fm = final_metrics(r, label, &trace, &bench, gt.as_ref(), cfg.metrics.sf_candidates)?;
                log::info!("replicate {r} {label}: f_min {}", fm.f_min);
                Ok(Outcome::Done(fm))
            }
            Err(aborted) => {
                log::warn!("replicate {r} {label} failed: {}", aborted);
                create_dir(&failed_dir)?;
                let path = failed_dir.join(trace_name(label, r));
                write_trace(&path, r, label, &aborted.trace, gt.as_ref(), bench.f_star)?;
                Ok(Outcome::Failed(Failure {
                    replicate: r,
                    method: label.clone(),
                    evaluations: aborted.trace.len(),
                    error: aborted.source.to_string(),
                }))
            }
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<Outcome>> = pool.install(|| tasks.par_iter().map(run_one).collect());

    let mut finals = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o? {
            Outcome::Done(f) => finals.push(f),
            Outcome::Failed(f) => failures.push(f),
        }
    }
    write_finals(&out_dir.join("final.csv"), &finals)?;
    let failures_path = out_dir.join("failures.json");
    if failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path).map_err(|e| CliError::io(&failures_path, e))?;
        }
    } else {
        let text = serde_json::to_string_pretty(&failures)? + "\n";
        fs::write(&failures_path, text).map_err(|e| CliError::io(&failures_path, e))?;
    }
    let summary = if finals.is_empty() {
        return Err(CliError::Aggregate("every run failed; see failures.json".into()));
    } else {
        aggregate(&trace_dir)?
    };
    summary.write_csv(&out_dir.join("summary.csv"))?;
    summary.write_json(&out_dir.join("summary.json"))?;
    Ok(RunReport {
        out_dir,
        summary,
        finals,
        failures,
    })
}

/// Summarizes the traces of an experiment directory (or of a directory of
/// trace files) and writes `summary.csv` and `summary.json` next to them.
pub fn aggregate_dir(dir: &Path) -> Result<SummaryTable> {
    let traces = dir.join("traces");
    let src = if traces.is_dir() { traces } else { dir.to_path_buf() };
    let summary = aggregate(&src)?;
    summary.write_csv(&dir.join("summary.csv"))?;
    summary.write_json(&dir.join("summary.json"))?;
    Ok(summary)
}
