//! Acquisition functions and their gradients.
//!
//! Scalar acquisitions act on a [`PosteriorGaussian`] and a
//! [`ToleranceState`] and are unit-agnostic. The model-level entry points
//! ([`q_edu`], [`AcqEvaluator`]) evaluate everything in the model's
//! standardized output space: the raw-unit tolerance is mapped through the
//! model's [`Standardization`] first.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpModel, PosteriorGaussian, Standardization};
use crate::normal::{cdf, pdf};

/// Posterior sd below which acquisitions take their deterministic limit.
pub const SD_EPS: f64 = 1e-12;

/// Default diversity parameter.
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Best observed value, tolerance and the threshold estimate
/// `gamma_n = f_min + epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceState {
    pub f_min: f64,
    pub epsilon: f64,
    pub gamma_n: f64,
}

impl ToleranceState {
    pub fn new(f_min: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        if !f_min.is_finite() {
            return Err(Error::Input(format!("non-finite f_min {f_min}")));
        }
        Ok(ToleranceState {
            f_min,
            epsilon,
            gamma_n: f_min + epsilon,
        })
    }

    /// The same thresholds expressed in standardized output units.
    pub fn standardized(&self, s: &Standardization) -> ToleranceState {
        let f_min = s.to_std(self.f_min);
        let epsilon = self.epsilon / s.scale;
        ToleranceState {
            f_min,
            epsilon,
            gamma_n: f_min + epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Ei,
    Edu,
    Contour,
    QEdu,
    QEi,
    Random,
}

impl AcquisitionKind {
    pub fn is_batch(self) -> bool {
        matches!(self, AcquisitionKind::QEdu | AcquisitionKind::QEi)
    }
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_batch() -> usize {
    1
}

fn default_mc() -> usize {
    512
}

/// Which acquisition to maximize, with its tuning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default)]
    pub units: OutputUnits,
}

/// Output scale on which the acquisition is evaluated. EI, contour and q-EI
/// maximizers do not depend on it; EDU and q-EDU do, through their
/// `sigma^2` weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputUnits {
    #[default]
    Standardized,
    Raw,
}

impl AcquisitionSpec {
    pub fn new(kind: AcquisitionKind) -> Self {
        AcquisitionSpec {
            kind,
            lambda: DEFAULT_LAMBDA,
            batch_size: 1,
            mc_samples: default_mc(),
            units: OutputUnits::default(),
        }
    }

    pub fn ei() -> Self {
        Self::new(AcquisitionKind::Ei)
    }

    pub fn edu(lambda: f64) -> Self {
        AcquisitionSpec {
            lambda,
            ..Self::new(AcquisitionKind::Edu)
        }
    }

    pub fn contour(lambda: f64) -> Self {
        AcquisitionSpec {
            lambda,
            ..Self::new(AcquisitionKind::Contour)
        }
    }

    pub fn q_edu(lambda: f64, q: usize) -> Self {
        AcquisitionSpec {
            lambda,
            batch_size: q,
            ..Self::new(AcquisitionKind::QEdu)
        }
    }

    pub fn q_ei(q: usize, mc_samples: usize) -> Self {
        AcquisitionSpec {
            batch_size: q,
            mc_samples,
            ..Self::new(AcquisitionKind::QEi)
        }
    }

    pub fn random() -> Self {
        Self::new(AcquisitionKind::Random)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.kind == AcquisitionKind::QEi && self.mc_samples == 0 {
            return Err(Error::Config("q-EI needs at least one MC sample".into()));
        }
        Ok(())
    }

    /// Short label used in file names and CSV rows, e.g. `edu_0.5`.
    pub fn label(&self) -> String {
        match self.kind {
            AcquisitionKind::Ei => "ei".into(),
            AcquisitionKind::Edu => format!("edu_{}", self.lambda),
            AcquisitionKind::Contour => format!("contour_{}", self.lambda),
            AcquisitionKind::QEdu => format!("qedu_{}_q{}", self.lambda, self.batch_size),
            AcquisitionKind::QEi => format!("qei_q{}", self.batch_size),
            AcquisitionKind::Random => "random".into(),
        }
    }
}

/// Partial moments `∫_a^b (f − mu)^k p(f) df`, `k = 0, 1, 2`, of
/// `N(mu, sd²)`. Either limit may be infinite.
pub fn gaussian_partial_moments(a: f64, b: f64, mu: f64, sd: f64) -> Result<(f64, f64, f64)> {
    if a.is_nan() || b.is_nan() || a >= b {
        return Err(Error::Input(format!("need a < b, got a = {a}, b = {b}")));
    }
    if !(sd.is_finite() && sd > 0.0) || !mu.is_finite() {
        return Err(Error::Input(format!("need finite mu and sd > 0, got ({mu}, {sd})")));
    }
    let za = (a - mu) / sd;
    let zb = (b - mu) / sd;
    let m0 = cdf(zb) - cdf(za);
    let m1 = sd * (pdf(za) - pdf(zb));
    // (x − mu) φ((x − mu)/sd) vanishes at infinite limits.
    let edge = |x: f64, z: f64| if x.is_infinite() { 0.0 } else { (x - mu) * pdf(z) };
    let m2 = sd * (edge(a, za) - edge(b, zb)) + sd * sd * m0;
    Ok((m0, m1, m2))
}

fn second_moment_about(a: f64, b: f64, mu: f64, sd: f64, center: f64) -> f64 {
    let (m0, m1, m2) = gaussian_partial_moments(a, b, mu, sd).expect("valid interval");
    let shift = mu - center;
    m2 + 2.0 * shift * m1 + shift * shift * m0
}

/// Expected improvement below `f_min`.
pub fn ei(post: &PosteriorGaussian, f_min: f64) -> f64 {
    ei_partials(post, f_min).0
}

/// EI and its partial derivatives with respect to the posterior mean and sd.
pub fn ei_partials(post: &PosteriorGaussian, f_min: f64) -> (f64, f64, f64) {
    let diff = f_min - post.mean;
    if post.sd < SD_EPS {
        return if diff > 0.0 { (diff, -1.0, 0.0) } else { (0.0, 0.0, 0.0) };
    }
    let u = diff / post.sd;
    let (cu, pu) = (cdf(u), pdf(u));
    ((cu * diff + pu * post.sd).max(0.0), -cu, pu)
}

/// The diverse utility of an outcome `f`: a squared-improvement reward
/// below `gamma_n`, a shrinking band reward up to `gamma_n + lambda·sd`,
/// and zero above.
pub fn du_utility(f: f64, post: &PosteriorGaussian, tol: &ToleranceState, lambda: f64) -> f64 {
    let s2 = post.sd * post.sd;
    let band = lambda * lambda * s2;
    let d = f - tol.gamma_n;
    if f < tol.gamma_n {
        band + s2 * d * d
    } else if f <= tol.gamma_n + lambda * post.sd {
        band - d * d
    } else {
        0.0
    }
}

/// Expected diverse utility in closed form.
pub fn edu(post: &PosteriorGaussian, tol: &ToleranceState, lambda: f64) -> f64 {
    edu_partials(post, tol, lambda).0
}

/// EDU with its partial derivatives in the posterior mean and sd.
pub fn edu_partials(post: &PosteriorGaussian, tol: &ToleranceState, lambda: f64) -> (f64, f64, f64) {
    let s = post.sd;
    if s < SD_EPS {
        return (0.0, 0.0, 0.0);
    }
    let s2 = s * s;
    let g = tol.gamma_n - post.mean;
    let z = g / s;
    let zl = z + lambda;
    let (cz, pz, czl, pzl) = (cdf(z), pdf(z), cdf(zl), pdf(zl));

    let b = (1.0 + s2) * cz - czl;
    let c = (1.0 + s2) * pz - pzl;
    let e = pzl + lambda * czl;
    let value = (s2 + g * g) * b + g * s * c + lambda * s2 * e;

    // Derivatives of the bracketed factors in z (at fixed s) and s (at fixed z).
    let b_z = (1.0 + s2) * pz - pzl;
    let b_s = 2.0 * s * cz;
    let c_z = -(1.0 + s2) * z * pz + zl * pzl;
    let c_s = 2.0 * s * pz;
    let e_z = -z * pzl;

    let d_g = 2.0 * g * b + (s2 + g * g) * b_z / s + s * c + g * c_z + lambda * s * e_z;
    let dz_ds = -z / s;
    let d_s = 2.0 * s * b
        + (s2 + g * g) * (b_s + b_z * dz_ds)
        + g * c
        + g * s * (c_s + c_z * dz_ds)
        + 2.0 * lambda * s * e
        + lambda * s2 * e_z * dz_ds;
    (value, -d_g, d_s)
}

/// EDU assembled from Gaussian partial moments: the expectation of the
/// diverse utility split at `gamma_n` and `gamma_n + lambda·sd`.
pub fn edu_from_partial_moments(post: &PosteriorGaussian, tol: &ToleranceState, lambda: f64) -> f64 {
    let s = post.sd;
    if s < SD_EPS {
        return 0.0;
    }
    let gamma = tol.gamma_n;
    let delta = lambda * s;
    let below = second_moment_about(f64::NEG_INFINITY, gamma, post.mean, s, gamma);
    let band = second_moment_about(gamma, gamma + delta, post.mean, s, gamma);
    delta * delta * cdf((gamma + delta - post.mean) / s) + s * s * below - band
}

/// Derivative of EDU with respect to `lambda`.
pub fn edu_dlambda(post: &PosteriorGaussian, tol: &ToleranceState, lambda: f64) -> f64 {
    let s = post.sd;
    if s < SD_EPS {
        return 0.0;
    }
    // the density terms from the band limits cancel exactly
    let zl = (tol.gamma_n - post.mean) / s + lambda;
    2.0 * lambda * cdf(zl) * s * s
}

/// Expected contour utility with the target level set to `gamma_n`.
pub fn contour_acq(post: &PosteriorGaussian, tol: &ToleranceState, lambda: f64) -> f64 {
    contour_partials(post, tol, lambda).0
}

/// Contour acquisition with partials in the posterior mean and sd.
pub fn contour_partials(post: &PosteriorGaussian, tol: &ToleranceState, lambda: f64) -> (f64, f64, f64) {
    let s = post.sd;
    if s < SD_EPS {
        return (0.0, 0.0, 0.0);
    }
    let gamma = tol.gamma_n;
    let delta = lambda * s;
    let (m0, _, _) = gaussian_partial_moments(gamma - delta, gamma + delta, post.mean, s).expect("valid band");
    let sq = second_moment_about(gamma - delta, gamma + delta, post.mean, s, gamma);
    let value = (delta * delta * m0 - sq).max(0.0);

    // value = s² h(z) with h'(z) = 2[φ(z−λ) − φ(z+λ) − z(Φ(z+λ) − Φ(z−λ))].
    let z = (gamma - post.mean) / s;
    let h = value / (s * s);
    let dh = 2.0 * (pdf(z - lambda) - pdf(z + lambda) - z * (cdf(z + lambda) - cdf(z - lambda)));
    (value, -s * dh, 2.0 * s * h - s * z * dh)
}

/// Standardized posterior at `x` as a [`PosteriorGaussian`].
pub fn posterior_std(model: &GpModel, x: &[f64]) -> PosteriorGaussian {
    let (m, v) = model.predict_std(x);
    PosteriorGaussian { mean: m, sd: v.sqrt() }
}

/// Batch EDU: `[1 − max_{j≠j'} corr_n(x_j, x_j')] Σ_j EDU(x_j)`, evaluated in
/// standardized units. For a single point the bracket is 1.
pub fn q_edu(model: &GpModel, batch: &[Vec<f64>], tol: &ToleranceState, lambda: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    for x in batch {
        if x.len() != model.dim() {
            return Err(Error::Input("batch point dimension mismatch".into()));
        }
    }
    let flat: Vec<f64> = batch.iter().flatten().copied().collect();
    let eval = AcqEvaluator::new(model, AcquisitionSpec::q_edu(lambda, batch.len()), *tol);
    Ok(eval.q_edu_value_grad(&flat).0)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Draws an `n_samples × q` matrix of standard normals for q-EI.
pub fn draw_normals<R: Rng + ?Sized>(n_samples: usize, q: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n_samples, q, |_, _| rng.sample(StandardNormal))
}

/// Factor `A` with `A Aᵀ = cov` for a PSD matrix.
fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

fn q_ei_from_moments(mean: &DVector<f64>, cov: &DMatrix<f64>, f_min: f64, normals: &DMatrix<f64>) -> McEstimate {
    let a = psd_factor(cov);
    let q = mean.len();
    let n = normals.nrows();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for s in 0..n {
        let mut best = 0.0f64;
        for j in 0..q {
            let mut f = mean[j];
            for k in 0..q {
                f += a[(j, k)] * normals[(s, k)];
            }
            best = best.max(f_min - f);
        }
        sum += best;
        sum_sq += best * best;
    }
    let nf = n as f64;
    let mean_v = sum / nf;
    let var = if n > 1 {
        ((sum_sq - nf * mean_v * mean_v) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        mean: mean_v,
        std_error: (var / nf).sqrt(),
    }
}

/// Monte-Carlo q-EI in raw units using the given standard normal draws
/// (common random numbers).
pub fn q_ei_mc_with_normals(
    model: &GpModel,
    batch: &[Vec<f64>],
    f_min: f64,
    normals: &DMatrix<f64>,
) -> Result<McEstimate> {
    if normals.ncols() != batch.len() || normals.nrows() == 0 {
        return Err(Error::Input("normal draws do not match the batch".into()));
    }
    let (mean, cov) = model.predict_joint(batch)?;
    Ok(q_ei_from_moments(&mean, &cov, f_min, normals))
}

/// Monte-Carlo q-EI with a fresh set of `n_samples` joint posterior draws.
pub fn q_ei_mc_estimate<R: Rng + ?Sized>(
    model: &GpModel,
    batch: &[Vec<f64>],
    f_min: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::Input("n_samples must be at least 1".into()));
    }
    let normals = draw_normals(n_samples, batch.len(), rng);
    q_ei_mc_with_normals(model, batch, f_min, &normals)
}

/// Monte-Carlo q-EI: expected best improvement over the batch.
pub fn q_ei_mc<R: Rng + ?Sized>(
    model: &GpModel,
    batch: &[Vec<f64>],
    f_min: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(q_ei_mc_estimate(model, batch, f_min, n_samples, rng)?.mean)
}

/// Evaluates an acquisition and its input gradient on a fitted model.
///
/// Values are in the model's standardized units. Inputs are flat vectors of
/// length `q·d` (`q = 1` for single-point acquisitions).
pub struct AcqEvaluator<'a> {
    model: &'a GpModel,
    spec: AcquisitionSpec,
    tol_std: ToleranceState,
    tol: ToleranceState,
    shift: f64,
    scale: f64,
    normals: Option<DMatrix<f64>>,
}

/// Step for the central differences used by q-EI.
const QEI_FD_STEP: f64 = 1e-6;

impl<'a> AcqEvaluator<'a> {
    /// `tol` is in raw units.
    pub fn new(model: &'a GpModel, spec: AcquisitionSpec, tol: ToleranceState) -> Self {
        let st = model.standardization();
        let tol_std = tol.standardized(&st);
        let (tol, shift, scale) = match spec.units {
            OutputUnits::Standardized => (tol_std, 0.0, 1.0),
            OutputUnits::Raw => (tol, st.shift, st.scale),
        };
        AcqEvaluator {
            model,
            spec,
            tol_std,
            tol,
            shift,
            scale,
            normals: None,
        }
    }

    /// Fixes the common random numbers used by q-EI.
    pub fn with_normals(mut self, normals: DMatrix<f64>) -> Self {
        self.normals = Some(normals);
        self
    }

    pub fn tolerance_std(&self) -> &ToleranceState {
        &self.tol_std
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_and_grad(x).map(|r| r.0).unwrap_or(f64::NAN)
    }

    /// Value and gradient, or `None` for kinds that have no acquisition.
    pub fn value_and_grad(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        match self.spec.kind {
            AcquisitionKind::Ei | AcquisitionKind::Edu | AcquisitionKind::Contour => Some(self.single_value_grad(x)),
            AcquisitionKind::QEdu => Some(self.q_edu_value_grad(x)),
            AcquisitionKind::QEi => self.q_ei_value_grad(x),
            AcquisitionKind::Random => None,
        }
    }

    fn scalar_partials(&self, post: &PosteriorGaussian) -> (f64, f64, f64) {
        let tol = &self.tol;
        match self.spec.kind {
            AcquisitionKind::Ei => ei_partials(post, tol.f_min),
            AcquisitionKind::Contour => contour_partials(post, tol, self.spec.lambda),
            _ => edu_partials(post, tol, self.spec.lambda),
        }
    }

    fn point_value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let p = self.model.predict_with_grad_std(x);
        let sd = p.var.sqrt();
        let post = PosteriorGaussian {
            mean: self.shift + self.scale * p.mean,
            sd: self.scale * sd,
        };
        let (v, dm, ds) = self.scalar_partials(&post);
        let grad = (0..x.len())
            .map(|j| {
                let dsd = if sd >= SD_EPS { p.dvar[j] / (2.0 * sd) } else { 0.0 };
                self.scale * (dm * p.dmean[j] + ds * dsd)
            })
            .collect();
        (v, grad)
    }

    fn single_value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.point_value_grad(x)
    }

    /// q-EDU with a subgradient through the most correlated pair.
    fn q_edu_value_grad(&self, flat: &[f64]) -> (f64, Vec<f64>) {
        let d = self.model.dim();
        let pts: Vec<&[f64]> = flat.chunks(d).collect();
        let q = pts.len();
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(q);
        for p in &pts {
            let (v, g) = self.point_value_grad(p);
            total += v;
            grads.push(g);
        }
        if q == 1 {
            return (total, grads.pop().unwrap());
        }
        let (mut a, mut b) = (0, 1);
        let (mut corr, mut ga, mut gb) = (f64::NEG_INFINITY, Vec::new(), Vec::new());
        for i in 0..q {
            for j in (i + 1)..q {
                let (c, gi, gj) = self.model.corr_with_grad(pts[i], pts[j]);
                if ga.is_empty() || c > corr {
                    (a, b, corr, ga, gb) = (i, j, c, gi, gj);
                }
            }
        }
        let bracket = 1.0 - corr;
        let mut grad = Vec::with_capacity(flat.len());
        for g in &grads {
            grad.extend(g.iter().map(|v| bracket * v));
        }
        for j in 0..d {
            grad[a * d + j] -= total * ga[j];
            grad[b * d + j] -= total * gb[j];
        }
        (bracket * total, grad)
    }

    fn q_ei_at(&self, flat: &[f64], normals: &DMatrix<f64>) -> f64 {
        let d = self.model.dim();
        let batch: Vec<Vec<f64>> = flat.chunks(d).map(|c| c.to_vec()).collect();
        let (mean, cov) = self.model.predict_joint_std(&batch);
        q_ei_from_moments(&mean, &cov, self.tol_std.f_min, normals).mean
    }

    fn q_ei_value_grad(&self, flat: &[f64]) -> Option<(f64, Vec<f64>)> {
        let normals = self.normals.as_ref()?;
        let v = self.q_ei_at(flat, normals);
        let mut grad = vec![0.0; flat.len()];
        let mut xp = flat.to_vec();
        for i in 0..flat.len() {
            let orig = xp[i];
            let hi = (orig + QEI_FD_STEP).min(1.0);
            let lo = (orig - QEI_FD_STEP).max(0.0);
            xp[i] = hi;
            let fp = self.q_ei_at(&xp, normals);
            xp[i] = lo;
            let fm = self.q_ei_at(&xp, normals);
            xp[i] = orig;
            grad[i] = (fp - fm) / (hi - lo);
        }
        Some((v, grad))
    }
}
