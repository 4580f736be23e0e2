//! Experiment configuration files.

use std::path::{Path, PathBuf};

use edu_core::acquisition::{AcquisitionKind, AcquisitionSpec, OutputUnits, DEFAULT_LAMBDA};
use edu_core::benchmarks::{
    bowls_registry, camel8_registry, rover_env_from_config, rover_registry, Benchmark, RoverEnvConfig,
};
use edu_core::bo::default_n_init;
use edu_core::gp::DEFAULT_FIT_RESTARTS;
use edu_core::metrics::FLOOD_FILL_RESOLUTION;
use edu_core::optimizer::OptimizerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Current config schema version.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BenchmarkConfig {
    Bowls {
        dim: usize,
    },
    Camel8,
    Rover {
        #[serde(default = "default_rover_env")]
        env: RoverEnvConfig,
    },
}

fn default_rover_env() -> RoverEnvConfig {
    RoverEnvConfig {
        obstacles: Vec::new(),
        m: 1000,
        seed: 0,
        generate: None,
    }
}

impl BenchmarkConfig {
    pub fn build(&self) -> Result<Benchmark> {
        Ok(match self {
            BenchmarkConfig::Bowls { dim } => bowls_registry(*dim)?,
            BenchmarkConfig::Camel8 => camel8_registry()?,
            BenchmarkConfig::Rover { env } => rover_registry(rover_env_from_config(env)?)?,
        })
    }
}

/// One compared method. Unset fields fall back to the experiment-wide
/// values (`lambda` 0.5, batch size `q`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: AcquisitionKind,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub mc_samples: Option<usize>,
    #[serde(default)]
    pub units: Option<OutputUnits>,
}

impl MethodConfig {
    pub fn spec(&self, q: usize) -> AcquisitionSpec {
        let mut spec = AcquisitionSpec::new(self.kind);
        spec.lambda = self.lambda.unwrap_or(DEFAULT_LAMBDA);
        spec.batch_size = match self.batch_size {
            Some(b) => b,
            None if self.kind.is_batch() || self.kind == AcquisitionKind::Random => q,
            None => 1,
        };
        if let Some(mc) = self.mc_samples {
            spec.mc_samples = mc;
        }
        if let Some(u) = self.units {
            spec.units = u;
        }
        spec
    }
}

/// Optional overrides of the acquisition optimizer defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerOverrides {
    pub n_restarts: Option<usize>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub raw_samples: Option<usize>,
}

impl OptimizerOverrides {
    pub fn apply(&self, mut cfg: OptimizerConfig) -> OptimizerConfig {
        if let Some(v) = self.n_restarts {
            cfg.n_restarts = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.grad_tol {
            cfg.grad_tol = v;
        }
        if let Some(v) = self.raw_samples {
            cfg.raw_samples = v;
        }
        cfg
    }
}

fn default_flood_fill() -> usize {
    FLOOD_FILL_RESOLUTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricOptions {
    /// Grid cells per axis for subregion labelling when `d <= 2`.
    #[serde(default = "default_flood_fill")]
    pub flood_fill_resolution: usize,
    /// Halton candidates for SF1/SF2 of each final basket; 0 disables them.
    #[serde(default)]
    pub sf_candidates: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            flood_fill_resolution: FLOOD_FILL_RESOLUTION,
            sf_candidates: 0,
        }
    }
}

fn default_q() -> usize {
    1
}

fn default_fit_restarts() -> usize {
    DEFAULT_FIT_RESTARTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub benchmark: BenchmarkConfig,
    pub methods: Vec<MethodConfig>,
    pub replicates: usize,
    /// Initial design size; defaults to the `10 d` rule (10 for `d = 2`).
    #[serde(default)]
    pub n_init: Option<usize>,
    /// Total evaluations per run.
    pub n_total: usize,
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Raw-unit tolerance; defaults to the benchmark's rule.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_fit_restarts")]
    pub fit_restarts: usize,
    #[serde(default)]
    pub optimizer: OptimizerOverrides,
    #[serde(default)]
    pub metrics: MetricOptions,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn specs(&self) -> Vec<AcquisitionSpec> {
        self.methods.iter().map(|m| m.spec(self.q)).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.specs().iter().map(|s| s.label()).collect()
    }

    pub fn n_init_for(&self, dim: usize) -> usize {
        self.n_init.unwrap_or_else(|| default_n_init(dim))
    }

    /// ε from the config, otherwise from the benchmark's rule.
    pub fn resolve_epsilon(&self, bench: &Benchmark) -> Result<f64> {
        let eps = match self.epsilon {
            Some(e) => e,
            None => bench
                .epsilon()
                .ok_or_else(|| CliError::Config(format!("{} has no default epsilon; set `epsilon`", bench.name)))?,
        };
        if !(eps.is_finite() && eps > 0.0) {
            return Err(CliError::Config(format!("epsilon must be positive, got {eps}")));
        }
        Ok(eps)
    }

    pub fn optimizer_for(&self, dim: usize) -> OptimizerConfig {
        self.optimizer.apply(OptimizerConfig::for_dim(dim))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(CliError::Config("replicates must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(CliError::Config("method list is empty".into()));
        }
        if self.q == 0 {
            return Err(CliError::Config("q must be at least 1".into()));
        }
        let labels = self.labels();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(CliError::Config(format!("method `{l}` listed twice")));
            }
        }
        for spec in self.specs() {
            spec.validate()?;
        }
        if self.metrics.flood_fill_resolution == 0 {
            return Err(CliError::Config("flood_fill_resolution must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1
replicates = 2
n_total = 12
[benchmark]
kind = "bowls"
dim = 2
[[methods]]
kind = "edu"
[[methods]]
kind = "q_edu"
"#;

    #[test]
    fn parse_minimal() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_init_for(2), 10);
        assert_eq!(cfg.labels(), vec!["edu_0.5", "qedu_0.5_q1"]);
        let b = cfg.benchmark.build().unwrap();
        assert!((cfg.resolve_epsilon(&b).unwrap() - b.f_star.unwrap().abs() / 10.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        let wrong_version = MINIMAL.replace("version = 1", "version = 7");
        assert!(ExperimentConfig::from_toml(&wrong_version).is_err());
        let unknown = format!("{MINIMAL}\nbogus = 3\n");
        assert!(ExperimentConfig::from_toml(&unknown).is_err());
        let dup = format!("{MINIMAL}\n[[methods]]\nkind = \"edu\"\nlambda = 0.5\n");
        assert!(ExperimentConfig::from_toml(&dup).unwrap().validate().is_err());
        let zero = MINIMAL.replace("replicates = 2", "replicates = 0");
        assert!(ExperimentConfig::from_toml(&zero).unwrap().validate().is_err());
    }

    #[test]
    fn explicit_epsilon_wins() {
        let cfg = ExperimentConfig::from_toml(&MINIMAL.replace("n_total = 12", "n_total = 12\nepsilon = 0.3")).unwrap();
        let b = cfg.benchmark.build().unwrap();
        assert_eq!(cfg.resolve_epsilon(&b).unwrap(), 0.3);
    }
}
