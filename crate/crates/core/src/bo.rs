//! The EDU optimization loop, its batch variant and an ask/tell campaign
//! interface for external objectives.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{draw_normals, AcqEvaluator, AcquisitionKind, AcquisitionSpec, ToleranceState};
use crate::error::{Error, Result};
use crate::gp::{fit_map, Dataset, GpModel, Standardization, DEFAULT_FIT_RESTARTS};
use crate::optimizer::{lhs, maximize, maximize_batch, OptimizerConfig};

/// Version of the serialized campaign state.
pub const STATE_VERSION: u32 = 1;

/// Proposals closer than this (sup norm) to an evaluated point are rejected.
pub const PROPOSAL_MIN_DISTANCE: f64 = 1e-9;

/// Perturbation applied when retries keep producing near-duplicates.
pub const PROPOSAL_PERTURBATION: f64 = 1e-6;

const PROPOSAL_RETRIES: usize = 2;

/// Initial design size rule of thumb: `10 d`, except 10 points when `d = 2`.
pub fn default_n_init(d: usize) -> usize {
    if d == 2 {
        10
    } else {
        10 * d
    }
}

fn default_fit_restarts() -> usize {
    DEFAULT_FIT_RESTARTS
}

/// Inputs of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub n_init: usize,
    /// Total evaluation budget `N`, initial design included.
    pub n_total: usize,
    pub spec: AcquisitionSpec,
    /// Tolerance in raw objective units.
    pub epsilon: f64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    #[serde(default = "default_fit_restarts")]
    pub fit_restarts: usize,
    /// Initial design to use instead of drawing an LHS from `seed`.
    #[serde(default)]
    pub initial_design: Option<Vec<Vec<f64>>>,
    /// Record wall-clock time per proposal; otherwise `wall_ms` is 0.
    #[serde(default)]
    pub record_timing: bool,
}

impl LoopConfig {
    /// Defaults for dimension `d`: `default_n_init(d)` initial points and the
    /// optimizer's `round(4.5 d)` restarts.
    pub fn new(d: usize, n_total: usize, spec: AcquisitionSpec, epsilon: f64, seed: u64) -> Self {
        LoopConfig {
            n_init: default_n_init(d),
            n_total,
            spec,
            epsilon,
            optimizer: OptimizerConfig::for_dim(d),
            seed,
            fit_restarts: DEFAULT_FIT_RESTARTS,
            initial_design: None,
            record_timing: false,
        }
    }

    pub fn with_n_init(mut self, n_init: usize) -> Self {
        self.n_init = n_init;
        self
    }

    pub fn with_initial_design(mut self, design: Vec<Vec<f64>>) -> Self {
        self.n_init = design.len();
        self.initial_design = Some(design);
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if self.n_init == 0 || self.n_init > self.n_total {
            return Err(Error::Config(format!(
                "need 1 <= n_init <= N, got n_init = {}, N = {}",
                self.n_init, self.n_total
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        self.spec.validate()?;
        let kind = self.spec.kind;
        if !kind.is_batch() && kind != AcquisitionKind::Random && self.spec.batch_size != 1 {
            return Err(Error::Config(format!("{kind:?} proposes one point at a time")));
        }
        if kind != AcquisitionKind::Random && self.n_init < 2 && self.n_total > self.n_init {
            return Err(Error::Config("model-based runs need n_init >= 2".into()));
        }
        if self.optimizer.n_restarts == 0 {
            return Err(Error::Config("optimizer needs at least one restart".into()));
        }
        if let Some(design) = &self.initial_design {
            if design.len() != self.n_init {
                return Err(Error::Config(format!(
                    "initial design has {} points, n_init is {}",
                    design.len(),
                    self.n_init
                )));
            }
            for p in design {
                if p.len() != dim || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Config(format!(
                        "initial design point {p:?} is not in [0,1]^{dim}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One evaluation of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based evaluation count.
    pub eval: usize,
    /// Proposal round; 0 is the initial design.
    pub round: usize,
    /// Position within the round.
    pub batch_index: usize,
    pub point: Vec<f64>,
    pub value: f64,
    pub f_min: f64,
    pub gamma_n: f64,
    /// Maximized acquisition value (standardized units) of the round.
    pub acq_value: Option<f64>,
    pub wall_ms: f64,
}

/// Everything a run evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub epsilon: f64,
    /// Number of GP fits performed.
    pub fits: usize,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.point.clone()).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.value).collect()
    }

    pub fn f_min(&self) -> Option<f64> {
        self.records.last().map(|r| r.f_min)
    }

    /// Points whose value is within `epsilon` of `reference`.
    pub fn tolerable_points(&self, reference: f64) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .filter(|r| r.value <= reference + self.epsilon)
            .map(|r| r.point.clone())
            .collect()
    }
}

/// An elicited lower bound `f_L` on the global minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound(pub f64);

impl LowerBound {
    /// Checks `f_L <= f(x*)` when the minimum is known.
    pub fn new(f_l: f64, known_minimum: Option<f64>) -> Result<Self> {
        if !f_l.is_finite() {
            return Err(Error::Config(format!("lower bound must be finite, got {f_l}")));
        }
        if let Some(m) = known_minimum {
            if f_l > m {
                return Err(Error::Config(format!(
                    "lower bound {f_l} exceeds the known minimum {m}"
                )));
            }
        }
        Ok(LowerBound(f_l))
    }
}

/// Whether `value <= reference + epsilon`, where the reference is exactly one
/// of a lower bound or the known minimum.
pub fn tolerable(value: f64, lower: Option<LowerBound>, f_star: Option<f64>, epsilon: f64) -> Result<bool> {
    let reference = match (lower, f_star) {
        (Some(LowerBound(l)), None) => l,
        (None, Some(m)) => m,
        (None, None) => return Err(Error::Config("need a lower bound or a known minimum".into())),
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "give either a lower bound or a known minimum, not both".into(),
            ))
        }
    };
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(value <= reference + epsilon)
}

/// Serializable state of an ask/tell optimization campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    version: u32,
    dim: usize,
    config: LoopConfig,
    design: Vec<Vec<f64>>,
    data: Option<Dataset>,
    rng: ChaCha8Rng,
    standardization: Option<Standardization>,
    records: Vec<TraceRecord>,
    rounds: usize,
    fits: usize,
    last_acq: Option<f64>,
    last_wall_ms: f64,
}

impl Campaign {
    pub fn new(dim: usize, config: LoopConfig) -> Result<Self> {
        config.validate(dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let design = match &config.initial_design {
            Some(d) => d.clone(),
            None => lhs(config.n_init, dim, &mut rng),
        };
        Ok(Campaign {
            version: STATE_VERSION,
            dim,
            config,
            design,
            data: None,
            rng,
            standardization: None,
            records: Vec::new(),
            rounds: 0,
            fits: 0,
            last_acq: None,
            last_wall_ms: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn n_evaluated(&self) -> usize {
        self.records.len()
    }

    pub fn remaining(&self) -> usize {
        self.config.n_total.saturating_sub(self.records.len())
    }

    pub fn is_done(&self) -> bool {
        self.remaining() == 0
    }

    /// Number of GP fits so far.
    pub fn fits(&self) -> usize {
        self.fits
    }

    pub fn dataset(&self) -> Option<&Dataset> {
        self.data.as_ref()
    }

    /// Standardization of the most recent model fit.
    pub fn standardization(&self) -> Option<Standardization> {
        self.standardization
    }

    pub fn tolerance(&self) -> Option<ToleranceState> {
        let d = self.data.as_ref()?;
        ToleranceState::new(d.f_min(), self.config.epsilon).ok()
    }

    pub fn trace(&self) -> Trace {
        Trace {
            records: self.records.clone(),
            epsilon: self.config.epsilon,
            fits: self.fits,
        }
    }

    /// Next points to evaluate: the unevaluated part of the initial design,
    /// then batches of `min(q, remaining)` proposals. Empty when the budget is
    /// spent.
    pub fn ask(&mut self) -> Result<Vec<Vec<f64>>> {
        let started = Instant::now();
        let n = self.records.len();
        let out = if n < self.config.n_init {
            self.last_acq = None;
            self.design[n..].to_vec()
        } else if self.is_done() {
            Vec::new()
        } else {
            let q = self.config.spec.batch_size.min(self.remaining());
            self.propose(q)?
        };
        self.last_wall_ms = if self.config.record_timing {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        Ok(out)
    }

    fn propose(&mut self, q: usize) -> Result<Vec<Vec<f64>>> {
        let d = self.dim;
        if self.config.spec.kind == AcquisitionKind::Random {
            self.last_acq = None;
            let mut batch: Vec<Vec<f64>> = Vec::with_capacity(q);
            while batch.len() < q {
                let p: Vec<f64> = (0..d).map(|_| self.rng.random::<f64>()).collect();
                if !self.too_close(&p, &batch) {
                    batch.push(p);
                }
            }
            return Ok(batch);
        }
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| Error::Input("no data to fit a model".into()))?;
        let model = fit_map(data, self.config.fit_restarts, &mut self.rng)?;
        self.fits += 1;
        self.standardization = Some(model.standardization());
        let tol = ToleranceState::new(data.f_min(), self.config.epsilon)?;

        let mut attempt = 0;
        loop {
            let (value, mut batch) = self.maximize_acquisition(&model, tol, q)?;
            for p in batch.iter_mut() {
                p.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            }
            let clash = (0..batch.len()).any(|i| self.too_close(&batch[i], &batch[..i]));
            if !clash {
                self.last_acq = Some(value);
                return Ok(batch);
            }
            attempt += 1;
            if attempt > PROPOSAL_RETRIES {
                log::warn!("proposal kept duplicating evaluated points; perturbing");
                let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
                for p in batch {
                    let mut p = p;
                    while self.too_close(&p, &accepted) {
                        for v in p.iter_mut() {
                            let step = if self.rng.random::<bool>() {
                                PROPOSAL_PERTURBATION
                            } else {
                                -PROPOSAL_PERTURBATION
                            };
                            *v = (*v + step).clamp(0.0, 1.0);
                        }
                    }
                    accepted.push(p);
                }
                self.last_acq = Some(value);
                return Ok(accepted);
            }
        }
    }

    fn maximize_acquisition(&mut self, model: &GpModel, tol: ToleranceState, q: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        let d = self.dim;
        let spec = AcquisitionSpec {
            batch_size: q,
            ..self.config.spec
        };
        let mut eval = AcqEvaluator::new(model, spec, tol);
        if spec.kind == AcquisitionKind::QEi {
            eval = eval.with_normals(draw_normals(spec.mc_samples, q, &mut self.rng));
        }
        let f = |x: &[f64]| eval.value_and_grad(x);
        let res = if spec.kind.is_batch() {
            maximize_batch(f, q, d, &self.config.optimizer, &mut self.rng)?
        } else {
            maximize(f, d, &self.config.optimizer, &mut self.rng)?
        };
        Ok((res.value, res.batch(d)))
    }

    fn too_close(&self, p: &[f64], others: &[Vec<f64>]) -> bool {
        let near = |o: &[f64]| o.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < PROPOSAL_MIN_DISTANCE;
        others.iter().any(|o| near(o)) || self.data.as_ref().is_some_and(|d| d.points().iter().any(|o| near(o)))
    }

    /// Appends evaluated points. All points are validated first; on error the
    /// state is unchanged.
    pub fn tell(&mut self, points: &[Vec<f64>], values: &[f64]) -> Result<()> {
        if points.len() != values.len() {
            return Err(Error::Input(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        if points.is_empty() {
            return Ok(());
        }
        let mut data: Option<Dataset> = self.data.clone();
        for (p, v) in points.iter().zip(values) {
            if p.len() != self.dim {
                return Err(Error::Input(format!(
                    "point {p:?} does not have dimension {}",
                    self.dim
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFiniteObjective {
                    point: p.clone(),
                    value: *v,
                });
            }
            match data.as_mut() {
                Some(d) => d.push(p.clone(), *v)?,
                None => data = Some(Dataset::new(vec![p.clone()], vec![*v])?),
            }
        }
        let round = self.rounds;
        let mut f_min = self.records.last().map_or(f64::INFINITY, |r| r.f_min);
        for (i, (p, v)) in points.iter().zip(values).enumerate() {
            f_min = f_min.min(*v);
            self.records.push(TraceRecord {
                eval: self.records.len() + 1,
                round,
                batch_index: i,
                point: p.clone(),
                value: *v,
                f_min,
                gamma_n: f_min + self.config.epsilon,
                acq_value: self.last_acq,
                wall_ms: self.last_wall_ms,
            });
        }
        self.data = data;
        self.rounds += 1;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(STATE_VERSION as u64) {
            return Err(Error::Config(format!(
                "unsupported campaign state version {version:?}, expected {STATE_VERSION}"
            )));
        }
        let c: Campaign = serde_json::from_value(value)?;
        c.config.validate(c.dim)?;
        Ok(c)
    }
}

/// A run that stopped early, with everything evaluated before the failure.
#[derive(Debug, thiserror::Error)]
#[error("run aborted after {} evaluations: {source}", .trace.len())]
pub struct Aborted {
    pub trace: Box<Trace>,
    #[source]
    pub source: Error,
}

/// Runs the sequential loop (or the batch loop when the acquisition's batch size
/// exceeds 1) until `N` evaluations.
pub fn run_bo<F>(mut objective: F, dim: usize, cfg: &LoopConfig) -> std::result::Result<Trace, Aborted>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut campaign = Campaign::new(dim, cfg.clone()).map_err(|source| Aborted {
        trace: Box::new(Trace {
            records: Vec::new(),
            epsilon: cfg.epsilon,
            fits: 0,
        }),
        source,
    })?;
    let abort = |c: &Campaign, source| Aborted {
        trace: Box::new(c.trace()),
        source,
    };
    while !campaign.is_done() {
        let batch = campaign.ask().map_err(|e| abort(&campaign, e))?;
        let mut values = Vec::with_capacity(batch.len());
        for p in &batch {
            let v = objective(p);
            if !v.is_finite() {
                let n = values.len();
                campaign.tell(&batch[..n], &values).map_err(|e| abort(&campaign, e))?;
                return Err(abort(
                    &campaign,
                    Error::NonFiniteObjective {
                        point: p.clone(),
                        value: v,
                    },
                ));
            }
            values.push(v);
        }
        campaign.tell(&batch, &values).map_err(|e| abort(&campaign, e))?;
    }
    Ok(campaign.trace())
}

/// Batch loop: `q` proposals per model fit, all evaluated before the refit.
/// The last batch is truncated when the remaining budget is smaller than `q`.
pub fn run_batch_bo<F>(objective: F, dim: usize, cfg: &LoopConfig) -> std::result::Result<Trace, Aborted>
where
    F: FnMut(&[f64]) -> f64,
{
    run_bo(objective, dim, cfg)
}
