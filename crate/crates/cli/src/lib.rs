//! Replicated experiments for diverse Bayesian optimization: config files,
//! the runner behind the `edubo` binary and trace aggregation.

pub mod config;
pub mod error;
pub mod experiment;
pub mod summary;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiment::{aggregate_dir, run_experiment, RunOptions, RunReport};
pub use summary::{aggregate, SummaryTable};
