//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use edu_core::acquisition::{gaussian_partial_moments, ToleranceState};
use edu_core::gp::{Dataset, GpModel, PosteriorGaussian};
use nalgebra::{DMatrix, DVector};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Gauss-Kronrod 7/15 on `[a, b]`: (Kronrod estimate, error estimate).
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod quadrature to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth >= 50 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    rec(f, a, b, tol, 0)
}

fn normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// `E[u(f)]` for `f ~ N(mu, sd²)`, integrating over `mu ± 14 sd` split at the
/// given kinks of `u`.
pub fn gaussian_expectation(u: &dyn Fn(f64) -> f64, mu: f64, sd: f64, kinks: &[f64]) -> f64 {
    let lo = mu - 14.0 * sd;
    let hi = mu + 14.0 * sd;
    let mut cuts: Vec<f64> = kinks.iter().copied().filter(|k| *k > lo && *k < hi).collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let g = |f: f64| u(f) * normal_pdf(f, mu, sd);
    cuts.windows(2).map(|w| integrate(&g, w[0], w[1], 1e-14)).sum()
}

/// Central finite-difference gradient.
pub fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let o = xp[i];
            xp[i] = o + h;
            let fp = f(&xp);
            xp[i] = o - h;
            let fm = f(&xp);
            xp[i] = o;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i − b_i| / max(1, max_i |b_i|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn se(x: &[f64], y: &[f64], ls: &[f64], tau2: f64) -> f64 {
    let s: f64 = x.iter().zip(y).zip(ls).map(|((a, b), l)| ((a - b) / l).powi(2)).sum();
    tau2 * (-0.5 * s).exp()
}

/// Dense posterior computed by LU solves against `K + jitter I`, with the
/// constant mean re-estimated by generalized least squares. Works in
/// standardized units.
pub struct DenseGp {
    points: Vec<Vec<f64>>,
    ls: Vec<f64>,
    tau2: f64,
    kinv_resid: DVector<f64>,
    k_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub mean: f64,
    pub shift: f64,
    pub scale: f64,
}

impl DenseGp {
    pub fn new(data: &Dataset, model: &GpModel) -> Self {
        let p = model.params();
        let pts = data.points().to_vec();
        let n = pts.len();
        let vals = data.values();
        let shift = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - shift).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
        let scale = if n < 2 || var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
        let y = DVector::from_iterator(n, vals.iter().map(|v| (v - shift) / scale));
        let k = DMatrix::from_fn(n, n, |i, j| {
            se(&pts[i], &pts[j], &p.lengthscales, p.signal_variance) + if i == j { p.jitter } else { 0.0 }
        });
        let lu = k.clone().lu();
        let ones = DVector::from_element(n, 1.0);
        let kinv_one = lu.solve(&ones).unwrap();
        let kinv_y = lu.solve(&y).unwrap();
        let mean = ones.dot(&kinv_y) / ones.dot(&kinv_one);
        let resid = &y - DVector::from_element(n, mean);
        DenseGp {
            kinv_resid: lu.solve(&resid).unwrap(),
            k_lu: lu,
            points: pts,
            ls: p.lengthscales.clone(),
            tau2: p.signal_variance,
            mean,
            shift,
            scale,
        }
    }

    fn kvec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| se(x, p, &self.ls, self.tau2)),
        )
    }

    /// Standardized posterior mean and variance.
    pub fn predict_std(&self, x: &[f64]) -> (f64, f64) {
        let k = self.kvec(x);
        let w = self.k_lu.solve(&k).unwrap();
        (self.mean + k.dot(&self.kinv_resid), self.tau2 - k.dot(&w))
    }

    /// Standardized posterior covariance.
    pub fn cov_std(&self, x: &[f64], x2: &[f64]) -> f64 {
        let k1 = self.kvec(x);
        let k2 = self.kvec(x2);
        se(x, x2, &self.ls, self.tau2) - k1.dot(&self.k_lu.solve(&k2).unwrap())
    }

    /// Raw-unit posterior mean and sd.
    pub fn predict_raw(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_std(x);
        (self.shift + self.scale * m, self.scale * v.max(0.0).sqrt())
    }
}

/// A small deterministic 2-d dataset on a smooth function.
pub fn fixed_dataset_2d() -> Dataset {
    let pts = vec![
        vec![0.05, 0.12],
        vec![0.91, 0.33],
        vec![0.47, 0.58],
        vec![0.22, 0.86],
        vec![0.68, 0.07],
        vec![0.36, 0.29],
        vec![0.83, 0.79],
        vec![0.12, 0.49],
        vec![0.59, 0.95],
        vec![0.97, 0.61],
    ];
    let vals = pts
        .iter()
        .map(|p: &Vec<f64>| (3.0 * p[0]).sin() + (2.0 * p[1] - 0.7).powi(2) - 0.5 * p[0] * p[1])
        .collect();
    Dataset::new(pts, vals).unwrap()
}

/// The diverse utility of an outcome `f`, written out piecewise.
pub fn du_reference(f: f64, sd: f64, gamma: f64, lam: f64) -> f64 {
    let s2 = sd * sd;
    if f < gamma {
        lam * lam * s2 + s2 * (f - gamma).powi(2)
    } else if f <= gamma + lam * sd {
        lam * lam * s2 - (f - gamma).powi(2)
    } else {
        0.0
    }
}

/// Quadrature of the DU utility.
pub fn edu_quadrature(p: &PosteriorGaussian, t: &ToleranceState, lam: f64) -> f64 {
    let u = |f: f64| du_reference(f, p.sd, t.gamma_n, lam);
    gaussian_expectation(&u, p.mean, p.sd, &[t.gamma_n, t.gamma_n + lam * p.sd])
}

/// Quadrature of the contour utility around `gamma`.
pub fn contour_quadrature(p: &PosteriorGaussian, gamma: f64, lam: f64) -> f64 {
    let d = lam * p.sd;
    let u = |f: f64| {
        if (f - gamma).abs() <= d {
            d * d - (f - gamma).powi(2)
        } else {
            0.0
        }
    };
    gaussian_expectation(&u, p.mean, p.sd, &[gamma - d, gamma + d])
}

/// Quadrature of the improvement below `f_min`.
pub fn ei_quadrature(mu: f64, sd: f64, f_min: f64) -> f64 {
    gaussian_expectation(&|f: f64| (f_min - f).max(0.0), mu, sd, &[f_min])
}

/// E[DU] from the truncated moments: σ²-weighted squared improvement below
/// γ, the band term on [γ, γ+λσ], and λ²σ² times the mass below γ+λσ.
pub fn appendix_edu(p: &PosteriorGaussian, gamma: f64, lam: f64) -> f64 {
    let (mu, s) = (p.mean, p.sd);
    let delta = lam * s;
    let about_gamma = |a: f64, b: f64| {
        let (m0, m1, m2) = gaussian_partial_moments(a, b, mu, s).unwrap();
        let c = mu - gamma;
        (m0, m2 + 2.0 * c * m1 + c * c * m0)
    };
    let (_, below) = about_gamma(f64::NEG_INFINITY, gamma);
    let (_, band) = about_gamma(gamma, gamma + delta);
    let (mass, _) = about_gamma(f64::NEG_INFINITY, gamma + delta);
    delta * delta * mass + s * s * below - band
}

/// Gradient descent with backtracking on a smooth function.
pub fn descend(f: &dyn Fn(&[f64]) -> f64, x0: &[f64]) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut step = 0.1;
    for _ in 0..20_000 {
        let g = fd_grad(f, &x, 1e-7);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-10 {
            break;
        }
        let fx = f(&x);
        loop {
            let y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            if f(&y) < fx - 0.25 * step * gn * gn || step < 1e-14 {
                x = y;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
    }
    x
}
