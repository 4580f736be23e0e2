//! Multi-start, box-constrained maximization of acquisition functions.
//!
//! Each restart runs a projected limited-memory quasi-Newton ascent. Start
//! points come from a Latin hypercube design over the unit box.

use std::collections::VecDeque;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Settings for a single projected ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentConfig {
    pub max_iters: usize,
    /// Stop once the projected-gradient infinity norm drops below this.
    pub grad_tol: f64,
    /// Number of curvature pairs kept by the quasi-Newton update.
    pub memory: usize,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            max_iters: 200,
            grad_tol: 1e-6,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub start_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Infinity norm of `P(x + g) − x` for an ascent direction `g`.
fn projected_grad_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] + g[i]).clamp(lower[i], upper[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `f` over the box `[lower, upper]` starting from `x0`.
///
/// `f` returns the value and gradient, or `None` where it is undefined
/// (treated as a rejected step). Returns `None` only when `f` fails at the
/// projected start point. The returned value is never below the start
/// value.
pub fn ascend_box<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], cfg: &AscentConfig) -> Option<AscentResult>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = f(&x).filter(|(v, g)| v.is_finite() && g.iter().all(|c| c.is_finite()))?;
    let start_value = fx;
    // (s, y) pairs for the ascent problem written as minimization of −f.
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        if projected_grad_norm(&x, &g, lower, upper) < cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        // Minimization gradient of −f.
        let h: Vec<f64> = g.iter().map(|v| -v).collect();
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && h[i] > 0.0) || (x[i] >= upper[i] && h[i] < 0.0)))
            .collect();

        let mut accepted = false;
        for attempt in 0..2 {
            let use_memory = attempt == 0 && !pairs.is_empty();
            let mut dir = if use_memory {
                two_loop(&h, &pairs, &free)
            } else {
                let hmax = (0..n).filter(|&i| free[i]).map(|i| h[i].abs()).fold(0.0, f64::max);
                let scale = if hmax > 0.0 { (0.1 / hmax).min(1.0) } else { 0.0 };
                (0..n).map(|i| if free[i] { -h[i] * scale } else { 0.0 }).collect()
            };
            if dot(&dir, &h) >= 0.0 {
                if use_memory {
                    continue;
                }
                dir = vec![0.0; n];
            }
            if dir.iter().all(|v| *v == 0.0) {
                break;
            }
            let mut step = 1.0;
            for _ in 0..50 {
                let mut trial: Vec<f64> = (0..n).map(|i| x[i] + step * dir[i]).collect();
                project(&mut trial, lower, upper);
                let moved: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
                let decrease = dot(&h, &moved);
                if decrease >= 0.0 || moved.iter().all(|v| *v == 0.0) {
                    step *= 0.5;
                    continue;
                }
                if let Some((ft, gt)) = f(&trial) {
                    if ft.is_finite() && gt.iter().all(|c| c.is_finite()) && -ft <= -fx + 1e-4 * decrease {
                        let yv: Vec<f64> = (0..n).map(|i| -(gt[i] - g[i])).collect();
                        let sy = dot(&moved, &yv);
                        if sy > 1e-12 * dot(&moved, &moved).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
                            if pairs.len() == cfg.memory {
                                pairs.pop_front();
                            }
                            pairs.push_back((moved, yv));
                        }
                        x = trial;
                        fx = ft;
                        g = gt;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted {
                break;
            }
            pairs.clear();
        }
        if !accepted {
            break;
        }
    }
    Some(AscentResult {
        x,
        value: fx,
        start_value,
        iterations,
        converged,
    })
}

/// L-BFGS two-loop recursion restricted to the free coordinates; returns a
/// descent direction for the minimization gradient `h`.
fn two_loop(h: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>)>, free: &[bool]) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(a, f)| if *f { *a } else { 0.0 }).collect() };
    let mut q = mask(h);
    let masked: Vec<(Vec<f64>, Vec<f64>)> = pairs.iter().map(|(s, y)| (mask(s), mask(y))).collect();
    let mut alphas = Vec::with_capacity(masked.len());
    for (s, y) in masked.iter().rev() {
        let sy = dot(s, y);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let a = dot(s, &q) / sy;
        for i in 0..q.len() {
            q[i] -= a * y[i];
        }
        alphas.push(a);
    }
    let gamma = masked
        .last()
        .map(|(s, y)| {
            let yy = dot(y, y);
            if yy > 0.0 && dot(s, y) > 0.0 {
                dot(s, y) / yy
            } else {
                1.0
            }
        })
        .unwrap_or(1.0);
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for ((s, y), a) in masked.iter().zip(alphas.iter().rev()) {
        let sy = dot(s, y);
        if sy <= 0.0 {
            continue;
        }
        let b = dot(y, &q) / sy;
        for i in 0..q.len() {
            q[i] += s[i] * (a - b);
        }
    }
    mask(&q).into_iter().map(|v| -v).collect()
}

/// Latin hypercube design of `n` points in `[0,1]^d`: every coordinate has
/// exactly one value in each stratum `[i/n, (i+1)/n)`, uniformly jittered.
pub fn lhs<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut design = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for k in 0..d {
        strata.shuffle(rng);
        for (row, s) in design.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            row[k] = ((*s as f64 + u) / n as f64).min(1.0);
        }
    }
    design
}

/// Multi-start settings for acquisition maximization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub n_restarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// When positive, an LHS design of this size is scored first and the
    /// `n_restarts` best points become the ascent starts.
    #[serde(default)]
    pub raw_samples: usize,
}

impl OptimizerConfig {
    /// `round(4.5 d)` restarts.
    pub fn for_dim(d: usize) -> Self {
        OptimizerConfig {
            n_restarts: ((4.5 * d as f64).round() as usize).max(1),
            max_iters: 200,
            grad_tol: 1e-6,
            raw_samples: 0,
        }
    }

    fn ascent(&self) -> AscentConfig {
        AscentConfig {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            ..AscentConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    /// Maximizer; for batches the `q` points are concatenated.
    pub argmax: Vec<f64>,
    pub value: f64,
    /// Best value reached by each restart (`NaN` for discarded restarts).
    pub restart_values: Vec<f64>,
}

impl OptResult {
    /// Splits a concatenated batch maximizer into its points.
    pub fn batch(&self, d: usize) -> Vec<Vec<f64>> {
        self.argmax.chunks(d).map(|c| c.to_vec()).collect()
    }
}

/// Maximizes `acq` over `[0,1]^dim` from `cfg.n_restarts` LHS starts.
pub fn maximize<F, R>(acq: F, dim: usize, cfg: &OptimizerConfig, rng: &mut R) -> Result<OptResult>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    R: Rng + ?Sized,
{
    if cfg.n_restarts == 0 {
        return Err(Error::Config("n_restarts must be at least 1".into()));
    }
    let starts = if cfg.raw_samples > cfg.n_restarts {
        let raw = lhs(cfg.raw_samples, dim, rng);
        let mut scored: Vec<(usize, f64)> = raw
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let v = acq(x).map(|r| r.0).filter(|v| v.is_finite());
                (i, v.unwrap_or(f64::NEG_INFINITY))
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
            .iter()
            .take(cfg.n_restarts)
            .map(|(i, _)| raw[*i].clone())
            .collect()
    } else {
        lhs(cfg.n_restarts, dim, rng)
    };
    let lower = vec![0.0; dim];
    let upper = vec![1.0; dim];
    let ascent = cfg.ascent();
    let mut restart_values = Vec::with_capacity(starts.len());
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (i, x0) in starts.iter().enumerate() {
        match ascend_box(&acq, x0, &lower, &upper, &ascent) {
            Some(res) => {
                restart_values.push(res.value);
                if best.as_ref().is_none_or(|b| res.value > b.0) {
                    best = Some((res.value, res.x));
                }
            }
            None => {
                warn!("restart {i}: acquisition not finite at start {x0:?}; discarded");
                restart_values.push(f64::NAN);
            }
        }
    }
    let (value, argmax) =
        best.ok_or_else(|| Error::Optimization("acquisition was non-finite at every restart".into()))?;
    Ok(OptResult {
        argmax,
        value,
        restart_values,
    })
}

/// Joint maximization over `q` points in `[0,1]^d` (a `q·d` box).
pub fn maximize_batch<F, R>(acq: F, q: usize, d: usize, cfg: &OptimizerConfig, rng: &mut R) -> Result<OptResult>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    R: Rng + ?Sized,
{
    if q == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    maximize(acq, q * d, cfg, rng)
}
