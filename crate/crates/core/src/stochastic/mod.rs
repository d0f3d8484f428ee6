//! Seeded sampling: densities, fixed-design regression data and discretized
//! Gaussian paths.
//!
//! All randomness comes from [`ChaCha8Rng`] streams. A `(seed, stream)` pair
//! identifies a stream; Monte Carlo replicate `i` of a run with master seed
//! `s` uses stream `i`, so replicates are independent and reproducible
//! regardless of how they are scheduled. Gaussians are drawn with the
//! ziggurat sampler of `rand_distr`.

mod truth;

pub use truth::{BoundaryParams, BoundaryShape, Piece, TruthKind, TruthSpec};

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::estimator::EmpiricalMeasure;

/// The generator for stream `stream` of master seed `seed`.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Inverse distribution function of the triangular density.
pub fn triangular_quantile(u: f64) -> f64 {
    1.0 - (1.0 - u).sqrt()
}

/// `n` draws from the triangular density `2(1 - t)` on `[0, 1]`.
pub fn sample_triangular(n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    sample_triangular_with(n, &mut rng(seed, 0))
}

pub fn sample_triangular_with<R: Rng>(n: usize, rng: &mut R) -> Result<EmpiricalMeasure> {
    let xs = (0..n).map(|_| triangular_quantile(rng.gen::<f64>())).collect();
    EmpiricalMeasure::density(xs)
}

/// `n` draws from a density truth by inversion.
pub fn sample_pwl_density(truth: &TruthSpec, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    sample_density_with(truth, n, &mut rng(seed, 0))
}

pub fn sample_density_with<R: Rng>(truth: &TruthSpec, n: usize, rng: &mut R) -> Result<EmpiricalMeasure> {
    if !truth.is_density() {
        return Err(Error::Mode("cannot sample from a regression function".into()));
    }
    let xs = (0..n)
        .map(|_| truth.quantile(rng.gen::<f64>()))
        .collect::<Result<Vec<_>>>()?;
    EmpiricalMeasure::density(xs)
}

/// Fixed design `X_i = i / (n + 1)`, `i = 1..=n`.
pub fn fixed_design(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

/// Responses `r0(X_i) + sigma * eps_i` on the fixed design with standard
/// normal errors.
pub fn simulate_regression(truth: &TruthSpec, n: usize, sigma: f64, seed: u64) -> Result<EmpiricalMeasure> {
    simulate_regression_with(truth, n, sigma, &mut rng(seed, 0))
}

pub fn simulate_regression_with<R: Rng>(
    truth: &TruthSpec,
    n: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<EmpiricalMeasure> {
    if truth.is_density() {
        return Err(Error::Mode("regression data needs a regression-function truth".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return input("noise level must be finite and nonnegative");
    }
    let x = fixed_design(n);
    let y = x
        .iter()
        .map(|&t| {
            let e: f64 = rng.sample(StandardNormal);
            truth.eval(t) + sigma * e
        })
        .collect();
    EmpiricalMeasure::regression(x, y)
}

/// Which Gaussian process a [`GaussianPath`] discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    /// `X(t) = U(F0(t))` for a standard Brownian bridge `U`.
    Bridge,
    /// Standard Brownian motion.
    Motion,
}

/// `X` and its running integral `Y` on the uniform grid `t_i = i / m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPath {
    pub kind: PathKind,
    pub grid: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl GaussianPath {
    /// Build from `X` values on the uniform grid of `x.len() - 1` intervals;
    /// `Y` is the cumulative trapezoid integral of `X`.
    pub fn from_x(kind: PathKind, x: Vec<f64>) -> Result<Self> {
        let m = x.len().saturating_sub(1);
        if m < 1 || x.iter().any(|v| !v.is_finite()) {
            return input("path needs at least two finite values");
        }
        let grid = uniform_grid(m);
        let y = cumulative_trapezoid(&x, 1.0 / m as f64);
        Ok(Self { kind, grid, x, y })
    }

    /// Number of grid intervals.
    pub fn m(&self) -> usize {
        self.grid.len() - 1
    }

    /// The same path observed on every `factor`-th grid point, with `Y`
    /// recomputed on the coarse grid.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.m() % factor != 0 {
            return input("coarsening factor must divide the grid size");
        }
        let x = self.x.iter().step_by(factor).copied().collect();
        Self::from_x(self.kind, x)
    }

    /// CSV with columns `t,x,y`, preceded by `# key=value` comment lines.
    pub fn to_csv(&self, header: &[(&str, String)]) -> String {
        let mut s = String::new();
        for (k, v) in header {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str("t,x,y\n");
        for i in 0..self.grid.len() {
            let _ = writeln!(s, "{},{},{}", self.grid[i], self.x[i], self.y[i]);
        }
        s
    }
}

fn uniform_grid(m: usize) -> Vec<f64> {
    (0..=m).map(|i| i as f64 / m as f64).collect()
}

fn cumulative_trapezoid(x: &[f64], dt: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    y.push(0.0);
    for w in x.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        y.push(acc);
    }
    y
}

/// Discretized Gaussian path on `m` uniform intervals of `[0, 1]`.
///
/// In bridge mode the bridge is built as `W(u) - u W(1)` on the time-changed
/// grid `u_i = F0(t_i)`, so `truth` must be a density supported in `[0, 1]`.
pub fn gaussian_path(m: usize, kind: PathKind, truth: Option<&TruthSpec>, seed: u64) -> Result<GaussianPath> {
    gaussian_path_with(m, kind, truth, &mut rng(seed, 0))
}

pub fn gaussian_path_with<R: Rng>(
    m: usize,
    kind: PathKind,
    truth: Option<&TruthSpec>,
    rng: &mut R,
) -> Result<GaussianPath> {
    if m < 16 {
        return input("path grids need at least 16 intervals");
    }
    let grid = uniform_grid(m);
    let x = match kind {
        PathKind::Motion => {
            let sd = (1.0 / m as f64).sqrt();
            let mut x = Vec::with_capacity(m + 1);
            let mut w = 0.0;
            x.push(0.0);
            for _ in 0..m {
                let z: f64 = rng.sample(StandardNormal);
                w += sd * z;
                x.push(w);
            }
            x
        }
        PathKind::Bridge => {
            let truth = truth.ok_or_else(|| Error::Input("bridge paths need a distribution function".into()))?;
            if !truth.is_density() {
                return Err(Error::Mode("bridge time change needs a density truth".into()));
            }
            if truth.start() < 0.0 || truth.end() > 1.0 {
                return input("bridge time change needs a density supported in [0, 1]");
            }
            let mut u: Vec<f64> = grid.iter().map(|&t| truth.cdf(t)).collect();
            u[0] = 0.0;
            u[m] = 1.0;
            let mut w = Vec::with_capacity(m + 1);
            let mut acc = 0.0;
            w.push(0.0);
            for i in 0..m {
                let du = (u[i + 1] - u[i]).max(0.0);
                let z: f64 = rng.sample(StandardNormal);
                acc += du.sqrt() * z;
                w.push(acc);
            }
            let w1 = w[m];
            let mut x: Vec<f64> = (0..=m).map(|i| w[i] - u[i] * w1).collect();
            x[0] = 0.0;
            x[m] = 0.0;
            x
        }
    };
    let y = cumulative_trapezoid(&x, 1.0 / m as f64);
    Ok(GaussianPath { kind, grid, x, y })
}
