//! Gaussian-process surrogate on deterministic observations.
//!
//! The model uses a constant mean and an anisotropic squared-exponential
//! kernel. Observed values are standardized internally (mean 0, sd 1) and
//! every posterior quantity is returned in raw objective units unless the
//! method name says otherwise (`*_std`). Hyperparameters are fitted by
//! maximum a posteriori estimation under Gamma priors, with the constant
//! mean profiled out by generalized least squares.

use libm::lgamma as ln_gamma;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{ascend_box, AscentConfig};

/// Points closer than this (max-norm) are treated as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Initial nugget relative to the signal variance.
pub const JITTER_START: f64 = 1e-6;
/// Largest nugget tried before giving up on a factorization.
pub const JITTER_MAX: f64 = 1e-2;

pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 1e2);
pub const SIGNAL_VARIANCE_BOUNDS: (f64, f64) = (1e-4, 1e3);

/// Standardized sd below which posterior correlations are defined as zero
/// (raised to `√(2·jitter)` when the nugget is larger).
pub const CORR_SD_FLOOR: f64 = 1e-6;

/// Gamma prior in the shape-rate parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln() - self.rate * x
    }

    /// Derivative of `ln_pdf` with respect to `ln x`.
    fn dln_pdf_dlog(&self, x: f64) -> f64 {
        (self.shape - 1.0) - self.rate * x
    }
}

/// Prior on the signal variance.
pub const SIGNAL_VARIANCE_PRIOR: GammaPrior = GammaPrior { shape: 2.0, rate: 0.15 };
/// Prior on every lengthscale.
pub const LENGTHSCALE_PRIOR: GammaPrior = GammaPrior { shape: 3.0, rate: 6.0 };

/// Evaluated design points in the unit cube with their raw objective values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("dataset needs at least one point".into()));
        }
        if points.len() != values.len() {
            return Err(Error::Input(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        let mut data = Dataset {
            points: Vec::with_capacity(points.len()),
            values: Vec::with_capacity(values.len()),
        };
        for (p, v) in points.into_iter().zip(values) {
            data.push(p, v)?;
        }
        Ok(data)
    }

    /// Appends an observation after validating it against the existing data.
    pub fn push(&mut self, point: Vec<f64>, value: f64) -> Result<()> {
        self.validate(&point, value)?;
        self.points.push(point);
        self.values.push(value);
        Ok(())
    }

    /// Checks that `(point, value)` could be appended.
    pub fn validate(&self, point: &[f64], value: f64) -> Result<()> {
        if let Some(first) = self.points.first() {
            if first.len() != point.len() {
                return Err(Error::Input(format!(
                    "point has dimension {}, dataset has {}",
                    point.len(),
                    first.len()
                )));
            }
        }
        if point.is_empty() {
            return Err(Error::Input("zero-dimensional point".into()));
        }
        if point.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
            return Err(Error::Input(format!("point {point:?} is outside the unit cube")));
        }
        if !value.is_finite() {
            return Err(Error::Input(format!("non-finite value {value}")));
        }
        if self.contains_near(point, DUPLICATE_TOL) {
            return Err(Error::Input(format!("duplicate point {point:?}")));
        }
        Ok(())
    }

    /// True when some stored point lies within `tol` (max-norm) of `point`.
    pub fn contains_near(&self, point: &[f64], tol: f64) -> bool {
        self.points.iter().any(|p| max_dist(p, point) <= tol)
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Best (smallest) observed value.
    pub fn f_min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Affine map between raw and standardized objective values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub shift: f64,
    pub scale: f64,
}

impl Standardization {
    /// Sample mean and (n-1) standard deviation; the scale falls back to 1
    /// for constant data.
    pub fn fit(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let shift = values.iter().sum::<f64>() / n;
        let scale = if values.len() < 2 {
            1.0
        } else {
            let var = values.iter().map(|v| (v - shift).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            if sd < 1e-12 {
                1.0
            } else {
                sd
            }
        };
        Standardization { shift, scale }
    }

    pub fn to_std(&self, raw: f64) -> f64 {
        (raw - self.shift) / self.scale
    }

    pub fn to_raw(&self, std: f64) -> f64 {
        std * self.scale + self.shift
    }
}

/// Kernel hyperparameters, all in standardized output units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub mean: f64,
    pub jitter: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64) -> Self {
        KernelParams {
            jitter: JITTER_START * signal_variance,
            lengthscales,
            signal_variance,
            mean: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::Input(format!(
                "lengthscales must be positive, got {:?}",
                self.lengthscales
            )));
        }
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return Err(Error::Input(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) || !self.mean.is_finite() {
            return Err(Error::Input("jitter and mean must be finite".into()));
        }
        Ok(())
    }

    /// Log-space vector `(ln θ, ln τ²)` used by the MAP search.
    pub fn log_vector(&self) -> Vec<f64> {
        let mut u: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        u.push(self.signal_variance.ln());
        u
    }
}

/// Squared-exponential kernel `τ² exp(-Σ (x_k - x2_k)² / (2 θ_k²))`.
pub fn kernel_eval(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    if x.len() != x2.len() || x.len() != params.lengthscales.len() {
        return Err(Error::Input("dimension mismatch in kernel".into()));
    }
    if x.iter().chain(x2).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite kernel input".into()));
    }
    params.validate()?;
    Ok(sq_exp(x, x2, &params.lengthscales, params.signal_variance))
}

#[inline]
fn sq_exp(x: &[f64], x2: &[f64], lengthscales: &[f64], signal_variance: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..x.len() {
        let r = (x[k] - x2[k]) / lengthscales[k];
        s += r * r;
    }
    signal_variance * (-0.5 * s).exp()
}

fn correlation_matrix(points: &[Vec<f64>], lengthscales: &[f64]) -> DMatrix<f64> {
    let n = points.len();
    let mut r = DMatrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let v = sq_exp(&points[i], &points[j], lengthscales, 1.0);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

struct Factored {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

/// Factors `τ² R + jitter I`, growing the jitter tenfold on failure until it
/// exceeds `JITTER_MAX τ²`.
fn factor_with_escalation(corr: &DMatrix<f64>, signal_variance: f64, start_jitter: f64) -> Option<Factored> {
    let mut jitter = start_jitter.max(JITTER_START * signal_variance);
    while jitter <= JITTER_MAX * signal_variance * (1.0 + 1e-9) {
        let mut k = corr * signal_variance;
        for i in 0..k.nrows() {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            return Some(Factored { chol, jitter });
        }
        jitter *= 10.0;
    }
    None
}

struct Profiled {
    value: f64,
    mean: f64,
    alpha: DVector<f64>,
}

/// Log marginal likelihood with the constant mean replaced by its GLS
/// estimate.
fn profiled_log_likelihood(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> Profiled {
    let n = y.len();
    let ones = DVector::from_element(n, 1.0);
    let kinv_one = chol.solve(&ones);
    let kinv_y = chol.solve(y);
    let mean = kinv_y.sum() / kinv_one.sum();
    let alpha = &kinv_y - &kinv_one * mean;
    let resid = y.add_scalar(-mean);
    let quad = resid.dot(&alpha);
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let value = -0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Profiled { value, mean, alpha }
}

fn log_prior(lengthscales: &[f64], signal_variance: f64) -> f64 {
    SIGNAL_VARIANCE_PRIOR.ln_pdf(signal_variance)
        + lengthscales.iter().map(|l| LENGTHSCALE_PRIOR.ln_pdf(*l)).sum::<f64>()
}

/// Log posterior density (up to a constant) of the hyperparameters given
/// `data`: profiled log marginal likelihood of the standardized values plus
/// the Gamma log prior densities. `params.mean` is ignored.
pub fn log_map_objective(params: &KernelParams, data: &Dataset) -> Result<f64> {
    params.validate()?;
    if params.lengthscales.len() != data.dim() {
        return Err(Error::Input("lengthscale count differs from dimension".into()));
    }
    let std = Standardization::fit(data.values());
    let y = DVector::from_iterator(data.len(), data.values().iter().map(|v| std.to_std(*v)));
    let corr = correlation_matrix(data.points(), &params.lengthscales);
    let factored = factor_with_escalation(&corr, params.signal_variance, params.jitter)
        .ok_or_else(|| Error::Numerical("Cholesky failed at maximal jitter".into()))?;
    Ok(profiled_log_likelihood(&factored.chol, &y).value + log_prior(&params.lengthscales, params.signal_variance))
}

/// The MAP objective as a function of `(ln θ_1, …, ln θ_d, ln τ²)` with the
/// jitter held at a fixed multiple of `τ²`.
pub struct MapObjective<'a> {
    points: &'a [Vec<f64>],
    y: DVector<f64>,
    rel_jitter: f64,
}

impl<'a> MapObjective<'a> {
    pub fn new(data: &'a Dataset, rel_jitter: f64) -> Self {
        let std = Standardization::fit(data.values());
        MapObjective {
            points: data.points(),
            y: DVector::from_iterator(data.len(), data.values().iter().map(|v| std.to_std(*v))),
            rel_jitter,
        }
    }

    /// Value and gradient in log-parameter space, or `None` when the kernel
    /// matrix cannot be factored.
    pub fn value_and_grad(&self, u: &[f64]) -> Option<(f64, Vec<f64>)> {
        let d = u.len() - 1;
        let lengthscales: Vec<f64> = u[..d].iter().map(|v| v.exp()).collect();
        let tau2 = u[d].exp();
        let corr = correlation_matrix(self.points, &lengthscales);
        let n = self.points.len();
        let mut k = &corr * tau2;
        for i in 0..n {
            k[(i, i)] += self.rel_jitter * tau2;
        }
        let chol = Cholesky::new(k.clone())?;
        let prof = profiled_log_likelihood(&chol, &self.y);
        let value = prof.value + log_prior(&lengthscales, tau2);
        if !value.is_finite() {
            return None;
        }
        // d/dψ = ½ Σ_ij (α_i α_j − K⁻¹_ij) ∂K_ij; the GLS mean is stationary
        // so it contributes nothing.
        let kinv = chol.inverse();
        let alpha = &prof.alpha;
        let mut grad = vec![0.0; d + 1];
        for i in 0..n {
            for j in 0..n {
                let w = alpha[i] * alpha[j] - kinv[(i, j)];
                if i != j {
                    let kij = tau2 * corr[(i, j)];
                    for (l, g) in grad.iter_mut().enumerate().take(d) {
                        let diff = self.points[i][l] - self.points[j][l];
                        *g += 0.5 * w * kij * diff * diff / (lengthscales[l] * lengthscales[l]);
                    }
                }
                grad[d] += 0.5 * w * k[(i, j)];
            }
        }
        for (l, g) in grad.iter_mut().enumerate().take(d) {
            *g += LENGTHSCALE_PRIOR.dln_pdf_dlog(lengthscales[l]);
        }
        grad[d] += SIGNAL_VARIANCE_PRIOR.dln_pdf_dlog(tau2);
        Some((value, grad))
    }

    /// Same as [`value_and_grad`](Self::value_and_grad) but escalating the
    /// jitter when the factorization fails.
    fn value_and_grad_escalating(&self, u: &[f64]) -> Option<(f64, Vec<f64>, f64)> {
        let mut rel = self.rel_jitter;
        loop {
            let obj = MapObjective {
                points: self.points,
                y: self.y.clone(),
                rel_jitter: rel,
            };
            if let Some((v, g)) = obj.value_and_grad(u) {
                return Some((v, g, rel));
            }
            rel *= 10.0;
            if rel > JITTER_MAX * (1.0 + 1e-9) {
                return None;
            }
        }
    }
}

/// Mean and standard deviation of the posterior predictive at one point, in
/// raw objective units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorGaussian {
    pub mean: f64,
    pub sd: f64,
}

/// Posterior moments and their input gradients, in standardized units.
#[derive(Debug, Clone)]
pub struct PosteriorWithGrad {
    pub mean: f64,
    pub var: f64,
    pub dmean: Vec<f64>,
    pub dvar: Vec<f64>,
}

/// A fitted Gaussian process. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    points: Vec<Vec<f64>>,
    y_std: DVector<f64>,
    params: KernelParams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    standardization: Standardization,
}

impl GpModel {
    /// Conditions the GP on `data` at fixed hyperparameters. The mean in
    /// `params` is replaced by the GLS estimate and the jitter may grow if
    /// the factorization fails.
    pub fn from_params(data: &Dataset, params: KernelParams) -> Result<Self> {
        params.validate()?;
        if params.lengthscales.len() != data.dim() {
            return Err(Error::Input("lengthscale count differs from dimension".into()));
        }
        let standardization = Standardization::fit(data.values());
        let y_std = DVector::from_iterator(data.len(), data.values().iter().map(|v| standardization.to_std(*v)));
        let corr = correlation_matrix(data.points(), &params.lengthscales);
        let factored = factor_with_escalation(&corr, params.signal_variance, params.jitter)
            .ok_or_else(|| Error::Numerical(format!("Cholesky failed at maximal jitter for params {params:?}")))?;
        let prof = profiled_log_likelihood(&factored.chol, &y_std);
        let params = KernelParams {
            mean: prof.mean,
            jitter: factored.jitter,
            ..params
        };
        Ok(GpModel {
            points: data.points().to_vec(),
            y_std,
            params,
            chol: factored.chol,
            alpha: prof.alpha,
            standardization,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn dim(&self) -> usize {
        self.params.lengthscales.len()
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn training_points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Lower Cholesky factor of `K + jitter I`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Kernel matrix `K + jitter I` the factor was computed from.
    pub fn kernel_matrix(&self) -> DMatrix<f64> {
        let mut k = correlation_matrix(&self.points, &self.params.lengthscales) * self.params.signal_variance;
        for i in 0..k.nrows() {
            k[(i, i)] += self.params.jitter;
        }
        k
    }

    /// `K⁻¹(y − μ 1)` in standardized units.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Standardized training outputs.
    pub fn y_std(&self) -> &DVector<f64> {
        &self.y_std
    }

    fn kvec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.points
                .iter()
                .map(|p| sq_exp(x, p, &self.params.lengthscales, self.params.signal_variance)),
        )
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Input(format!(
                "point has dimension {}, model has {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite point {x:?}")));
        }
        Ok(())
    }

    /// Posterior mean and variance in standardized units (variance clamped
    /// at zero).
    pub fn predict_std(&self, x: &[f64]) -> (f64, f64) {
        let k = self.kvec(x);
        let mean = self.params.mean + k.dot(&self.alpha);
        let w = self.chol.solve(&k);
        let var = (self.params.signal_variance - k.dot(&w)).max(0.0);
        (mean, var)
    }

    /// Posterior predictive distribution of the objective at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<PosteriorGaussian> {
        self.check_point(x)?;
        let (m, v) = self.predict_std(x);
        Ok(PosteriorGaussian {
            mean: self.standardization.to_raw(m),
            sd: v.sqrt() * self.standardization.scale,
        })
    }

    /// Standardized posterior moments with gradients in `x`.
    pub fn predict_with_grad_std(&self, x: &[f64]) -> PosteriorWithGrad {
        let d = self.dim();
        let ls = &self.params.lengthscales;
        let k = self.kvec(x);
        let w = self.chol.solve(&k);
        let mean = self.params.mean + k.dot(&self.alpha);
        let raw_var = self.params.signal_variance - k.dot(&w);
        let mut dmean = vec![0.0; d];
        let mut dvar = vec![0.0; d];
        for (i, p) in self.points.iter().enumerate() {
            for j in 0..d {
                let dk = -k[i] * (x[j] - p[j]) / (ls[j] * ls[j]);
                dmean[j] += dk * self.alpha[i];
                dvar[j] -= 2.0 * dk * w[i];
            }
        }
        if raw_var <= 0.0 {
            dvar.iter_mut().for_each(|g| *g = 0.0);
        }
        PosteriorWithGrad {
            mean,
            var: raw_var.max(0.0),
            dmean,
            dvar,
        }
    }

    /// Joint posterior mean and covariance at a batch, standardized units.
    pub fn predict_joint_std(&self, batch: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let q = batch.len();
        let n = self.points.len();
        let mut kx = DMatrix::zeros(n, q);
        for (j, x) in batch.iter().enumerate() {
            kx.set_column(j, &self.kvec(x));
        }
        let mean = kx.tr_mul(&self.alpha).add_scalar(self.params.mean);
        let w = self.chol.solve(&kx);
        let mut cov = DMatrix::zeros(q, q);
        for a in 0..q {
            for b in 0..q {
                let prior = sq_exp(
                    &batch[a],
                    &batch[b],
                    &self.params.lengthscales,
                    self.params.signal_variance,
                );
                cov[(a, b)] = prior - kx.column(a).dot(&w.column(b));
            }
        }
        (mean, clamp_psd(cov))
    }

    /// Joint posterior mean vector and covariance matrix in raw units.
    pub fn predict_joint(&self, batch: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        for x in batch {
            self.check_point(x)?;
        }
        let (m, c) = self.predict_joint_std(batch);
        let s = self.standardization;
        Ok((m.map(|v| s.to_raw(v)), c * (s.scale * s.scale)))
    }

    /// Posterior correlation of `f(x)` and `f(x2)`; zero when either
    /// standardized sd is below the floor (see [`CORR_SD_FLOOR`]).
    pub fn posterior_corr(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(x2)?;
        Ok(self.corr_with_grad(x, x2).0)
    }

    /// Posterior correlation and its gradients with respect to both points.
    pub fn corr_with_grad(&self, x1: &[f64], x2: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let zero = (0.0, vec![0.0; d], vec![0.0; d]);
        let p1 = self.predict_with_grad_std(x1);
        let p2 = self.predict_with_grad_std(x2);
        // The nugget leaves σ² ≈ jitter at training points, so the floor is
        // at least twice the nugget.
        let floor2 = (CORR_SD_FLOOR * CORR_SD_FLOOR).max(2.0 * self.params.jitter);
        if p1.var < floor2 || p2.var < floor2 {
            return zero;
        }
        let ls = &self.params.lengthscales;
        let k1 = self.kvec(x1);
        let k2 = self.kvec(x2);
        let w1 = self.chol.solve(&k1);
        let w2 = self.chol.solve(&k2);
        let k12 = sq_exp(x1, x2, ls, self.params.signal_variance);
        let cov = k12 - k1.dot(&w2);
        let denom = (p1.var * p2.var).sqrt();
        let corr = cov / denom;
        if corr >= 1.0 {
            return (1.0, vec![0.0; d], vec![0.0; d]);
        }
        if corr <= -1.0 {
            return (-1.0, vec![0.0; d], vec![0.0; d]);
        }
        let mut dc1 = vec![0.0; d];
        let mut dc2 = vec![0.0; d];
        for j in 0..d {
            let dk12 = -k12 * (x1[j] - x2[j]) / (ls[j] * ls[j]);
            dc1[j] = dk12;
            dc2[j] = -dk12;
        }
        for (i, p) in self.points.iter().enumerate() {
            for j in 0..d {
                let l2 = ls[j] * ls[j];
                dc1[j] -= -k1[i] * (x1[j] - p[j]) / l2 * w2[i];
                dc2[j] -= -k2[i] * (x2[j] - p[j]) / l2 * w1[i];
            }
        }
        let g1 = (0..d)
            .map(|j| dc1[j] / denom - 0.5 * corr * p1.dvar[j] / p1.var)
            .collect();
        let g2 = (0..d)
            .map(|j| dc2[j] / denom - 0.5 * corr * p2.dvar[j] / p2.var)
            .collect();
        (corr, g1, g2)
    }
}

/// Symmetrizes and, if needed, clamps negative eigenvalues to zero.
fn clamp_psd(mut cov: DMatrix<f64>) -> DMatrix<f64> {
    let q = cov.nrows();
    for a in 0..q {
        for b in 0..a {
            let v = 0.5 * (cov[(a, b)] + cov[(b, a)]);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    if q == 1 {
        cov[(0, 0)] = cov[(0, 0)].max(0.0);
        return cov;
    }
    let eig = cov.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|v| *v >= 0.0) {
        return cov;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

/// Number of hyperparameter restarts used when none is specified.
pub const DEFAULT_FIT_RESTARTS: usize = 8;

/// Fits kernel hyperparameters by MAP estimation: the best of `n_restarts`
/// box-constrained ascents in log space. The first restart starts at unit
/// signal variance and lengthscales of 1/3 (the prior mode); the rest are
/// drawn from `rng`.
pub fn fit_map<R: Rng + ?Sized>(data: &Dataset, n_restarts: usize, rng: &mut R) -> Result<GpModel> {
    if data.len() < 2 {
        return Err(Error::Input("fit_map needs at least two points".into()));
    }
    let d = data.dim();
    let mut lower = vec![LENGTHSCALE_BOUNDS.0.ln(); d];
    lower.push(SIGNAL_VARIANCE_BOUNDS.0.ln());
    let mut upper = vec![LENGTHSCALE_BOUNDS.1.ln(); d];
    upper.push(SIGNAL_VARIANCE_BOUNDS.1.ln());

    let n_restarts = n_restarts.max(1);
    let mut starts = Vec::with_capacity(n_restarts);
    let mut first = vec![(1.0f64 / 3.0).ln(); d];
    first.push(0.0);
    starts.push(first);
    for _ in 1..n_restarts {
        let mut u: Vec<f64> = (0..d).map(|_| rng.random_range(0.05f64.ln()..2.0f64.ln())).collect();
        u.push(rng.random_range(0.2f64.ln()..5.0f64.ln()));
        starts.push(u);
    }

    let objective = MapObjective::new(data, JITTER_START);
    let cfg = AscentConfig {
        max_iters: 200,
        grad_tol: 1e-6,
        ..AscentConfig::default()
    };
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut failures = Vec::new();
    for (idx, u0) in starts.into_iter().enumerate() {
        // The jitter level is fixed per restart at the smallest value that
        // factors the starting point.
        let Some((_, _, rel)) = objective.value_and_grad_escalating(&u0) else {
            failures.push(format!("restart {idx}: factorization failed at start"));
            continue;
        };
        let obj = MapObjective {
            points: objective.points,
            y: objective.y.clone(),
            rel_jitter: rel,
        };
        let result = ascend_box(|u: &[f64]| obj.value_and_grad(u), &u0, &lower, &upper, &cfg);
        match result {
            Some(res) => {
                if best.as_ref().is_none_or(|b| res.value > b.0) {
                    best = Some((res.value, res.x, rel));
                }
            }
            None => failures.push(format!("restart {idx}: non-finite objective")),
        }
    }
    let Some((_, u, rel)) = best else {
        return Err(Error::Numerical(format!(
            "all {n_restarts} MAP restarts failed: {}",
            failures.join("; ")
        )));
    };
    let tau2 = u[d].exp();
    let params = KernelParams {
        lengthscales: u[..d].iter().map(|v| v.exp()).collect(),
        signal_variance: tau2,
        mean: 0.0,
        jitter: rel * tau2,
    };
    GpModel::from_params(data, params)
}
