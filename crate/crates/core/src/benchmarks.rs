//! Test problems for diverse optimization.
//!
//! Every [`Benchmark`] is evaluated on the unit cube and mapped internally to
//! its native box. Ground-truth minimizers are refined numerically when the
//! registry is built rather than copied from tables.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::pdf_nd;

/// Width of every bowl in the `2^d`-bowls function.
pub const BOWL_WIDTH: f64 = 0.15;

/// How the tolerance of a benchmark is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    Fixed(f64),
    /// `|f_star| / 10`.
    TenthOfMinimum,
}

type Objective = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// An objective on a box domain with whatever ground truth is known.
#[derive(Clone)]
pub struct Benchmark {
    pub name: String,
    pub dim: usize,
    pub native_bounds: Vec<(f64, f64)>,
    /// Known minimizers of the ε-optimal subregions, in unit-cube coordinates.
    pub minimizers: Vec<Vec<f64>>,
    pub f_star: Option<f64>,
    /// A known lower bound on the global minimum.
    pub lower_bound: Option<f64>,
    pub epsilon_rule: EpsilonRule,
    native: Objective,
}

impl fmt::Debug for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Benchmark")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("minimizers", &self.minimizers.len())
            .field("f_star", &self.f_star)
            .field("epsilon_rule", &self.epsilon_rule)
            .finish()
    }
}

impl Benchmark {
    pub fn new(
        name: impl Into<String>,
        native_bounds: Vec<(f64, f64)>,
        native: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Benchmark {
            name: name.into(),
            dim: native_bounds.len(),
            native_bounds,
            minimizers: Vec::new(),
            f_star: None,
            lower_bound: None,
            epsilon_rule: EpsilonRule::TenthOfMinimum,
            native: Arc::new(native),
        }
    }

    pub fn to_native(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(&self.native_bounds)
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect()
    }

    pub fn to_unit(&self, native: &[f64]) -> Vec<f64> {
        native
            .iter()
            .zip(&self.native_bounds)
            .map(|(x, (lo, hi))| (x - lo) / (hi - lo))
            .collect()
    }

    /// Objective at a unit-cube point.
    pub fn eval(&self, unit: &[f64]) -> f64 {
        (self.native)(&self.to_native(unit))
    }

    /// Objective at a point in native coordinates.
    pub fn eval_native(&self, x: &[f64]) -> f64 {
        (self.native)(x)
    }

    /// Tolerance implied by the epsilon rule, if determinable.
    pub fn epsilon(&self) -> Option<f64> {
        match self.epsilon_rule {
            EpsilonRule::Fixed(e) => Some(e),
            EpsilonRule::TenthOfMinimum => self.f_star.map(|f| f.abs() / 10.0),
        }
    }
}

/// The `2^d`-bowls function: `−Σ_l φ_d((x − μ_l)/ξ)` over the bowl centres
/// `μ_l ∈ {1/4, 3/4}^d`. The density is not rescaled by `ξ^{-d}`.
pub fn bowls_eval(x: &[f64]) -> f64 {
    let d = x.len();
    let mut total = 0.0;
    let mut z = vec![0.0; d];
    for centre in bowl_centres(d) {
        for k in 0..d {
            z[k] = (x[k] - centre[k]) / BOWL_WIDTH;
        }
        total += pdf_nd(&z);
    }
    -total
}

/// The `2^d` bowl centres, enumerated in binary order (bit `k` of the index
/// set means coordinate `k` is 3/4).
pub fn bowl_centres(d: usize) -> Vec<Vec<f64>> {
    (0..1usize << d)
        .map(|l| (0..d).map(|k| if l >> k & 1 == 1 { 0.75 } else { 0.25 }).collect())
        .collect()
}

fn bowls_grad_hess(x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = x.len();
    let w2 = BOWL_WIDTH * BOWL_WIDTH;
    let mut g = vec![0.0; d];
    let mut h = vec![vec![0.0; d]; d];
    for centre in bowl_centres(d) {
        let diff: Vec<f64> = (0..d).map(|k| x[k] - centre[k]).collect();
        let z: Vec<f64> = diff.iter().map(|v| v / BOWL_WIDTH).collect();
        let c = pdf_nd(&z);
        for a in 0..d {
            g[a] += c * diff[a] / w2;
            for b in 0..d {
                let delta = if a == b { 1.0 / w2 } else { 0.0 };
                h[a][b] += c * (delta - diff[a] * diff[b] / (w2 * w2));
            }
        }
    }
    (g, h)
}

/// Solves `h·s = g` by LU with partial pivoting.
fn solve_small(h: &[Vec<f64>], g: &[f64]) -> Option<Vec<f64>> {
    let n = g.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| h[i][j]);
    let s = m.lu().solve(&nalgebra::DVector::from_column_slice(g))?;
    Some(s.iter().copied().collect())
}

/// Newton iteration on the gradient until the step falls below `1e-14`.
fn newton_refine<F>(x0: &[f64], grad_hess: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
{
    let mut x = x0.to_vec();
    for _ in 0..100 {
        let (g, h) = grad_hess(&x);
        let Some(step) = solve_small(&h, &g) else {
            break;
        };
        let size = step.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi -= si;
        }
        if size < 1e-14 {
            break;
        }
    }
    x
}

/// The `2^d`-bowls benchmark with minimizers refined from each bowl centre.
pub fn bowls_registry(d: usize) -> Result<Benchmark> {
    if d == 0 {
        return Err(Error::Config("bowls dimension must be at least 1".into()));
    }
    let minimizers: Vec<Vec<f64>> = bowl_centres(d)
        .iter()
        .map(|c| newton_refine(c, bowls_grad_hess))
        .collect();
    let f_star = minimizers.iter().map(|m| bowls_eval(m)).fold(f64::INFINITY, f64::min);
    let mut b = Benchmark::new(format!("bowls{d}"), vec![(0.0, 1.0); d], bowls_eval);
    b.minimizers = minimizers;
    b.f_star = Some(f_star);
    b.lower_bound = Some(f_star);
    Ok(b)
}

/// Native box of each six-hump camel pair: `τ ∈ [−3, 3]`, `η ∈ [−2, 2]`.
pub const CAMEL_BOUNDS: [(f64, f64); 2] = [(-3.0, 3.0), (-2.0, 2.0)];

/// The two-dimensional six-hump camel function.
pub fn camel2(t: f64, e: f64) -> f64 {
    (4.0 - 2.1 * t * t + t.powi(4) / 3.0) * t * t + t * e + (-4.0 + 4.0 * e * e) * e * e
}

fn camel2_grad_hess(p: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (t, e) = (p[0], p[1]);
    let g = vec![
        8.0 * t - 8.4 * t.powi(3) + 2.0 * t.powi(5) + e,
        t - 8.0 * e + 16.0 * e.powi(3),
    ];
    let h = vec![
        vec![8.0 - 25.2 * t * t + 10.0 * t.powi(4), 1.0],
        vec![1.0, -8.0 + 48.0 * e * e],
    ];
    (g, h)
}

/// Sum of four six-hump camel terms over consecutive coordinate pairs,
/// offset by 2.
pub fn camel8_eval(x: &[f64]) -> f64 {
    2.0 + x.chunks(2).map(|p| camel2(p[0], p[1])).sum::<f64>()
}

/// Local minima of the 2-d camel on its native box, found by Newton descent
/// from a start grid; sorted by value.
pub fn camel2_local_minima() -> Vec<([f64; 2], f64)> {
    let mut found: Vec<([f64; 2], f64)> = Vec::new();
    for i in 0..=24 {
        for j in 0..=16 {
            let start = [-3.0 + 0.25 * i as f64, -2.0 + 0.25 * j as f64];
            let x = newton_refine(&start, camel2_grad_hess);
            let (g, h) = camel2_grad_hess(&x);
            let inside = x[0].abs() <= 3.0 && x[1].abs() <= 2.0;
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            if !inside || g.iter().any(|v| v.abs() > 1e-9) || h[0][0] <= 0.0 || det <= 0.0 {
                continue;
            }
            if found
                .iter()
                .all(|(p, _)| (p[0] - x[0]).abs() + (p[1] - x[1]).abs() > 1e-6)
            {
                found.push(([x[0], x[1]], camel2(x[0], x[1])));
            }
        }
    }
    found.sort_by(|a, b| a.1.total_cmp(&b.1));
    found
}

/// The 8-d camel-sum benchmark. Its ε-optimal minimizers are the 16 sign
/// combinations of the two global camel minimizers in each pair.
pub fn camel8_registry() -> Result<Benchmark> {
    let minima = camel2_local_minima();
    if minima.len() < 2 {
        return Err(Error::Numerical("camel minimum catalog is incomplete".into()));
    }
    let c_star = minima[0].1;
    let globals: Vec<[f64; 2]> = minima
        .iter()
        .filter(|(_, v)| (v - c_star).abs() < 1e-9)
        .map(|(p, _)| *p)
        .collect();
    if globals.len() != 2 {
        return Err(Error::Numerical(format!(
            "expected two global camel minimizers, found {}",
            globals.len()
        )));
    }
    let f_star = 2.0 + 4.0 * c_star;
    let eps = f_star.abs() / 10.0;
    // Swapping any one pair to the next-best local minimum must leave the band.
    let runner_up = minima
        .iter()
        .map(|(_, v)| *v)
        .find(|v| (v - c_star).abs() >= 1e-9)
        .expect("checked length");
    if runner_up - c_star <= eps {
        return Err(Error::Numerical(
            "a non-global camel minimum falls inside the tolerance band".into(),
        ));
    }
    let bounds: Vec<(f64, f64)> = (0..4).flat_map(|_| CAMEL_BOUNDS).collect();
    let mut b = Benchmark::new("camel8", bounds, camel8_eval);
    let mut minimizers = Vec::with_capacity(16);
    for mask in 0..16usize {
        let native: Vec<f64> = (0..4).flat_map(|l| globals[mask >> l & 1]).collect();
        minimizers.push(b.to_unit(&native));
    }
    b.minimizers = minimizers;
    b.f_star = Some(f_star);
    b.lower_bound = Some(f_star);
    Ok(b)
}

/// Axis-aligned rectangle `[xmin, xmax] × [ymin, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.xmin && p[0] <= self.xmax && p[1] >= self.ymin && p[1] <= self.ymax
    }

    fn is_valid(&self) -> bool {
        [self.xmin, self.ymin, self.xmax, self.ymax]
            .iter()
            .all(|v| v.is_finite())
            && self.xmin < self.xmax
            && self.ymin < self.ymax
    }
}

pub const ROVER_TURN_POINTS: usize = 6;
pub const ROVER_DIM: usize = 2 * ROVER_TURN_POINTS;
pub const ROVER_STEP_BOUNDS: (f64, f64) = (-1.0 / 15.0, 1.0 / 3.0);
pub const ROVER_EPSILON: f64 = 17.0;

/// Obstacle field and cost constants for the rover path problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoverEnv {
    pub obstacles: Vec<Rect>,
    pub start: [f64; 2],
    pub target: [f64; 2],
    /// Number of points the path is discretized into.
    pub m: usize,
    pub penalty_rate: f64,
    pub base_rate: f64,
    pub offset: f64,
    pub scale: f64,
}

impl RoverEnv {
    pub fn new(obstacles: Vec<Rect>, m: usize) -> Result<Self> {
        let env = RoverEnv {
            obstacles,
            start: [0.05, 0.05],
            target: [0.75, 0.75],
            m,
            penalty_rate: 30.0,
            base_rate: 0.05,
            offset: 5.0,
            scale: 100.0,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn free(m: usize) -> Result<Self> {
        Self::new(Vec::new(), m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Config(format!("path needs at least 2 points, got {}", self.m)));
        }
        for r in &self.obstacles {
            if !r.is_valid() {
                return Err(Error::Config(format!("invalid obstacle {r:?}")));
            }
            if r.contains(self.start) || r.contains(self.target) {
                return Err(Error::Config(format!("obstacle {r:?} covers the start or the target")));
            }
        }
        Ok(())
    }

    fn rate(&self, p: [f64; 2]) -> f64 {
        let hit = self.obstacles.iter().any(|r| r.contains(p));
        if hit {
            self.penalty_rate + self.base_rate
        } else {
            self.base_rate
        }
    }
}

/// Samples the waypoint polyline at `env.m` points equally spaced in arc
/// length. `params` holds six `(Δx, Δy)` turn steps.
pub fn path_from_params(params: &[f64], env: &RoverEnv) -> Vec<[f64; 2]> {
    let mut way = Vec::with_capacity(params.len() / 2 + 1);
    way.push(env.start);
    for step in params.chunks(2) {
        let last = *way.last().expect("non-empty");
        way.push([last[0] + step[0], last[1] + step[1]]);
    }
    let seg_len: Vec<f64> = way
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .collect();
    let total: f64 = seg_len.iter().sum();
    if total == 0.0 {
        return vec![env.start; env.m];
    }
    let mut out = Vec::with_capacity(env.m);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for i in 0..env.m {
        let s = if i + 1 == env.m {
            total
        } else {
            total * i as f64 / (env.m - 1) as f64
        };
        while seg + 1 < seg_len.len() && s > seg_start + seg_len[seg] {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let t = if seg_len[seg] > 0.0 {
            ((s - seg_start) / seg_len[seg]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (way[seg], way[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

/// Rover cost: scaled endpoint miss distance plus the trapezoid-rule
/// traversal cost, minus the offset.
pub fn rover_eval(params: &[f64], env: &RoverEnv) -> f64 {
    let path = path_from_params(params, env);
    let end = path[path.len() - 1];
    let miss = ((end[0] - env.target[0]).powi(2) + (end[1] - env.target[1]).powi(2)).sqrt();
    let rates: Vec<f64> = path.iter().map(|p| env.rate(*p)).collect();
    let traversal: f64 = path
        .windows(2)
        .zip(rates.windows(2))
        .map(|(p, r)| {
            let len = ((p[1][0] - p[0][0]).powi(2) + (p[1][1] - p[0][1]).powi(2)).sqrt();
            0.5 * (r[0] + r[1]) * len
        })
        .sum();
    env.scale * miss + traversal - env.offset
}

/// Rover benchmark on `[−1/15, 1/3]^12` with ε = 17. The global minimum is
/// not known; the straight obstacle-free path cost is a lower bound.
pub fn rover_registry(env: RoverEnv) -> Result<Benchmark> {
    env.validate()?;
    let dist = ((env.target[0] - env.start[0]).powi(2) + (env.target[1] - env.start[1]).powi(2)).sqrt();
    let lower = env.base_rate * dist - env.offset;
    let mut b = Benchmark::new("rover", vec![ROVER_STEP_BOUNDS; ROVER_DIM], move |x| {
        rover_eval(x, &env)
    });
    b.lower_bound = Some(lower);
    b.epsilon_rule = EpsilonRule::Fixed(ROVER_EPSILON);
    Ok(b)
}

/// Random obstacle generation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleGenerator {
    pub count: usize,
    pub min_size: f64,
    pub max_size: f64,
}

/// Rover environment file contents: explicit rectangles, optionally
/// followed by seeded random ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoverEnvConfig {
    #[serde(default)]
    pub obstacles: Vec<Rect>,
    #[serde(default = "default_path_points")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub generate: Option<ObstacleGenerator>,
}

fn default_path_points() -> usize {
    1000
}

const MAX_PLACEMENT_TRIES: usize = 1000;

/// Builds a rover environment from explicit obstacles and/or a seeded
/// generator. Generated rectangles covering the start or target are redrawn.
pub fn rover_env_from_config(cfg: &RoverEnvConfig) -> Result<RoverEnv> {
    let mut obstacles = cfg.obstacles.clone();
    let probe = RoverEnv::new(obstacles.clone(), cfg.m)?;
    if let Some(generator) = cfg.generate {
        let (lo, hi) = (generator.min_size, generator.max_size);
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("invalid obstacle size range [{lo}, {hi}]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for k in 0..generator.count {
            let mut placed = None;
            for _ in 0..MAX_PLACEMENT_TRIES {
                let w = rng.random_range(lo..=hi);
                let h = rng.random_range(lo..=hi);
                let x = rng.random_range(0.0..=1.0 - w);
                let y = rng.random_range(0.0..=1.0 - h);
                let r = Rect {
                    xmin: x,
                    ymin: y,
                    xmax: x + w,
                    ymax: y + h,
                };
                if !r.contains(probe.start) && !r.contains(probe.target) {
                    placed = Some(r);
                    break;
                }
            }
            obstacles.push(placed.ok_or_else(|| {
                Error::Config(format!(
                    "could not place obstacle {k} after {MAX_PLACEMENT_TRIES} tries"
                ))
            })?);
        }
    }
    RoverEnv::new(obstacles, cfg.m)
}
