//! Diverse-optimization metrics: subregion membership, solution coverage,
//! optimization gap and the space-filling metrics SF1/SF2.

use std::collections::{BTreeSet, VecDeque};

use crate::benchmarks::Benchmark;
use crate::error::{Error, Result};

/// Cells per axis of the flood-fill grid used for `d <= 2`.
pub const FLOOD_FILL_RESOLUTION: usize = 512;

/// Default number of low-discrepancy candidates for SF1/SF2 (2^14).
pub const DEFAULT_SF_CANDIDATES: usize = 1 << 14;

/// Connected components of the ε-optimal region on a regular grid.
#[derive(Debug, Clone)]
struct FloodFill {
    res: usize,
    dim: usize,
    /// Per cell: the minimizer index owning the cell's component, if any.
    owner: Vec<Option<usize>>,
    inside: Vec<bool>,
}

impl FloodFill {
    fn build(dim: usize, res: usize, threshold: f64, minimizers: &[Vec<f64>], f: &dyn Fn(&[f64]) -> f64) -> Self {
        let n_cells = res.pow(dim as u32);
        let centre = |idx: usize| -> Vec<f64> {
            let mut rem = idx;
            (0..dim)
                .map(|_| {
                    let c = rem % res;
                    rem /= res;
                    (c as f64 + 0.5) / res as f64
                })
                .collect()
        };
        let inside: Vec<bool> = (0..n_cells).map(|i| f(&centre(i)) <= threshold).collect();
        let mut component = vec![usize::MAX; n_cells];
        let mut n_comp = 0;
        let mut queue = VecDeque::new();
        for seed in 0..n_cells {
            if !inside[seed] || component[seed] != usize::MAX {
                continue;
            }
            component[seed] = n_comp;
            queue.push_back(seed);
            while let Some(c) = queue.pop_front() {
                let mut stride = 1;
                for _ in 0..dim {
                    let coord = (c / stride) % res;
                    let mut nbrs = [None, None];
                    if coord > 0 {
                        nbrs[0] = Some(c - stride);
                    }
                    if coord + 1 < res {
                        nbrs[1] = Some(c + stride);
                    }
                    for nb in nbrs.into_iter().flatten() {
                        if inside[nb] && component[nb] == usize::MAX {
                            component[nb] = n_comp;
                            queue.push_back(nb);
                        }
                    }
                    stride *= res;
                }
            }
            n_comp += 1;
        }
        // A component belongs to the first minimizer that lies in it.
        let mut comp_owner = vec![None; n_comp];
        let grid = FloodFill {
            res,
            dim,
            owner: Vec::new(),
            inside: Vec::new(),
        };
        for (k, m) in minimizers.iter().enumerate() {
            let cell = grid.cell_of(m);
            if inside[cell] && comp_owner[component[cell]].is_none() {
                comp_owner[component[cell]] = Some(k);
            }
        }
        let owner = component
            .iter()
            .map(|&c| if c == usize::MAX { None } else { comp_owner[c] })
            .collect();
        FloodFill {
            res,
            dim,
            owner,
            inside,
        }
    }

    fn cell_of(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for v in x.iter().take(self.dim) {
            let c = ((v * self.res as f64).floor() as isize).clamp(0, self.res as isize - 1) as usize;
            idx += c * stride;
            stride *= self.res;
        }
        idx
    }
}

/// Known ε-optimal structure of a benchmark.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub minimizers: Vec<Vec<f64>>,
    pub f_star: f64,
    pub epsilon: f64,
    grid: Option<FloodFill>,
}

impl GroundTruth {
    /// Builds the ground truth for `bench`. Subregions are labelled by flood
    /// fill for `d <= 2` and by nearest minimizer otherwise.
    pub fn new(bench: &Benchmark, epsilon: f64) -> Result<Self> {
        Self::with_resolution(bench, epsilon, FLOOD_FILL_RESOLUTION)
    }

    pub fn with_resolution(bench: &Benchmark, epsilon: f64, res: usize) -> Result<Self> {
        let f_star = bench
            .f_star
            .ok_or_else(|| Error::Config(format!("{} has no known minimum", bench.name)))?;
        if bench.minimizers.is_empty() {
            return Err(Error::Config(format!("{} has no known minimizers", bench.name)));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        let grid = (bench.dim <= 2)
            .then(|| FloodFill::build(bench.dim, res, f_star + epsilon, &bench.minimizers, &|x| bench.eval(x)));
        Ok(GroundTruth {
            minimizers: bench.minimizers.clone(),
            f_star,
            epsilon,
            grid,
        })
    }

    /// Ground truth labelled only by nearest minimizer, whatever the dimension.
    pub fn nearest_only(bench: &Benchmark, epsilon: f64) -> Result<Self> {
        let mut gt = Self::with_resolution(bench, epsilon, 1)?;
        gt.grid = None;
        Ok(gt)
    }

    pub fn k(&self) -> usize {
        self.minimizers.len()
    }

    pub fn threshold(&self) -> f64 {
        self.f_star + self.epsilon
    }

    fn nearest(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, m) in self.minimizers.iter().enumerate() {
            let d2: f64 = m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            if d2 < best.1 {
                best = (k, d2);
            }
        }
        best.0
    }

    /// Subregion index of a point whose objective value is already known.
    pub fn subregion_of_value(&self, x: &[f64], fx: f64) -> Option<usize> {
        if fx.is_nan() || fx > self.threshold() {
            return None;
        }
        match &self.grid {
            Some(grid) => {
                let cell = grid.cell_of(x);
                if grid.inside[cell] {
                    grid.owner[cell]
                } else {
                    // x is in the band but its cell centre is not
                    Some(self.nearest(x))
                }
            }
            None => Some(self.nearest(x)),
        }
    }
}

/// Index of the ε-optimal subregion containing `x`, or `None` when `x` is
/// not ε-optimal.
pub fn subregion_of(x: &[f64], gt: &GroundTruth, f: &dyn Fn(&[f64]) -> f64) -> Option<usize> {
    gt.subregion_of_value(x, f(x))
}

/// Fraction of the `K` subregions containing at least one point.
pub fn coverage_rate(points: &[Vec<f64>], values: &[f64], gt: &GroundTruth) -> f64 {
    let found: BTreeSet<usize> = points
        .iter()
        .zip(values)
        .filter_map(|(x, v)| gt.subregion_of_value(x, *v))
        .collect();
    found.len() as f64 / gt.k() as f64
}

/// Coverage rate after each successive point.
pub fn coverage_curve(points: &[Vec<f64>], values: &[f64], gt: &GroundTruth) -> Vec<f64> {
    let mut found = BTreeSet::new();
    points
        .iter()
        .zip(values)
        .map(|(x, v)| {
            if let Some(k) = gt.subregion_of_value(x, *v) {
                found.insert(k);
            }
            found.len() as f64 / gt.k() as f64
        })
        .collect()
}

/// Running `f_min − f_star` after each evaluation.
pub fn optimization_gap(values: &[f64], f_star: f64) -> Vec<f64> {
    let mut best = f64::INFINITY;
    values
        .iter()
        .map(|v| {
            best = best.min(*v);
            best - f_star
        })
        .collect()
}

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

/// First `n` points of the Halton sequence in `[0,1)^d`, starting at the
/// origin.
pub fn halton(n: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    if d > PRIMES.len() {
        return Err(Error::Input(format!("Halton sequence supports d <= {}", PRIMES.len())));
    }
    Ok((0..n as u64)
        .map(|i| PRIMES[..d].iter().map(|&b| radical_inverse(i, b)).collect())
        .collect())
}

/// Space-filling metrics of a solution basket: SF1 is the largest distance
/// from the cube to its nearest basket point, SF2 the average distance. Both
/// are estimated over `n_candidates` Halton points. With `projection` the
/// metrics are computed on the listed coordinates only.
pub fn sf_metrics(
    basket: &[Vec<f64>],
    d: usize,
    projection: Option<&[usize]>,
    n_candidates: usize,
) -> Result<(f64, f64)> {
    if basket.is_empty() {
        return Err(Error::Input("solution basket is empty".into()));
    }
    if n_candidates == 0 {
        return Err(Error::Input("need at least one candidate".into()));
    }
    let coords: Vec<usize> = match projection {
        Some(p) => p.to_vec(),
        None => (0..d).collect(),
    };
    if coords.is_empty() || coords.iter().any(|&c| c >= d) {
        return Err(Error::Input(format!("bad projection {coords:?} for d = {d}")));
    }
    if basket.iter().any(|p| p.len() != d) {
        return Err(Error::Input("basket point dimension mismatch".into()));
    }
    let projected: Vec<Vec<f64>> = basket.iter().map(|p| coords.iter().map(|&c| p[c]).collect()).collect();
    sf_on_candidates(&projected, &halton(n_candidates, coords.len())?)
}

/// SF1/SF2 of `basket` over an explicit candidate set.
pub fn sf_on_candidates(basket: &[Vec<f64>], candidates: &[Vec<f64>]) -> Result<(f64, f64)> {
    if basket.is_empty() || candidates.is_empty() {
        return Err(Error::Input("empty basket or candidate set".into()));
    }
    let mut max_q: f64 = 0.0;
    let mut sum_q = 0.0;
    for c in candidates {
        let q = basket
            .iter()
            .map(|t| t.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        max_q = max_q.max(q);
        sum_q += q;
    }
    Ok((max_q, sum_q / candidates.len() as f64))
}
