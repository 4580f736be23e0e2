use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use edu_cli::{aggregate_dir, run_experiment, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "edubo", version, about = "Diverse Bayesian optimization experiments")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every replicate and method of a TOML experiment config.
    Run {
        config: PathBuf,
        /// Base seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock times (reruns are then no longer byte-identical).
        #[arg(long)]
        timing: bool,
    },
    /// Recompute summary.csv and summary.json from a directory of traces.
    Aggregate { dir: PathBuf },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            timing,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let opts = RunOptions {
                out_dir: out,
                seed,
                jobs: cli.jobs,
                timing,
            };
            let report = run_experiment(&cfg, &opts).with_context(|| format!("running {}", config.display()))?;
            for label in cfg.labels() {
                if let Some(row) = report.summary.last(&label) {
                    let cov = row
                        .coverage
                        .map(|b| format!("{:.3}", b.mean))
                        .unwrap_or_else(|| "-".into());
                    let gap = row.gap.map(|b| format!("{:.4}", b.mean)).unwrap_or_else(|| "-".into());
                    println!("{label:<20} N={:<4} coverage {cov:<7} gap {gap}", row.iter);
                }
            }
            for f in &report.failures {
                eprintln!(
                    "failed: replicate {} {} after {} evaluations: {}",
                    f.replicate, f.method, f.evaluations, f.error
                );
            }
            println!("wrote {}", report.out_dir.display());
        }
        Command::Aggregate { dir } => {
            let summary = aggregate_dir(&dir).with_context(|| format!("aggregating {}", dir.display()))?;
            println!("{} summary rows written to {}", summary.rows.len(), dir.display());
        }
    }
    Ok(())
}
