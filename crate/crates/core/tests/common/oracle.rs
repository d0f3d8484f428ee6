//! Dense-grid reference solutions of the convex least squares problems.
//!
//! `g` is piecewise linear on a grid. The criterion
//! `½∫g² - (1/n) sum w_i g(X_i)` is exact for such `g`, and convexity is
//! a nonnegative slope increase at every interior node. The sparse QP goes
//! to an interior-point solver.
//!
//! The grid is [`GRID`] uniform points plus caller-supplied nodes. A
//! uniform grid alone misplaces a kink of slope change `β` by up to half a
//! cell, an error of order `β h / 4`; adding the knots of the fit under test
//! makes the grid class contain that fit, so any remaining distance means a
//! dense-grid perturbation improves on it.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

pub const GRID: usize = 2001;

pub struct OracleFit {
    pub grid: Vec<f64>,
    pub g: Vec<f64>,
}

impl OracleFit {
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.grid.len() - 1;
        if t >= self.grid[n] {
            return self.g[n];
        }
        let j = self.grid.partition_point(|&s| s <= t).clamp(1, n) - 1;
        let u = (t - self.grid[j]) / (self.grid[j + 1] - self.grid[j]);
        (1.0 - u) * self.g[j] + u * self.g[j + 1]
    }

    /// Slope increase at each interior node.
    pub fn slope_increases(&self) -> Vec<f64> {
        let s: Vec<f64> = (0..self.grid.len() - 1)
            .map(|j| (self.g[j + 1] - self.g[j]) / (self.grid[j + 1] - self.grid[j]))
            .collect();
        s.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Largest `|f - g|` over the oracle grid and `extra` points.
    pub fn distance(&self, f: impl Fn(f64) -> f64, extra: &[f64]) -> f64 {
        self.grid
            .iter()
            .chain(extra)
            .map(|&t| (f(t) - self.eval(t)).abs())
            .fold(0.0, f64::max)
    }
}

/// Density mode on `[0, hi]`: also `g >= 0` and `∫g = 1`.
pub fn density(obs: &[f64], hi: f64, extra: &[f64]) -> OracleFit {
    let w = vec![1.0; obs.len()];
    solve(&grid(hi, extra), obs, &w, true)
}

/// Regression mode on `[0, 1]`.
pub fn regression(x: &[f64], y: &[f64], extra: &[f64]) -> OracleFit {
    solve(&grid(1.0, extra), x, y, false)
}

/// [`GRID`] uniform points on `[0, hi]` plus `extra`; a uniform point
/// closer than `1e-6 h` to an extra one is dropped.
fn grid(hi: f64, extra: &[f64]) -> Vec<f64> {
    let h = hi / (GRID - 1) as f64;
    let extra: Vec<f64> = extra.iter().copied().filter(|t| *t > 0.0 && *t < hi).collect();
    let mut g: Vec<f64> = (0..GRID)
        .map(|j| j as f64 * h)
        .filter(|t| extra.iter().all(|e| (t - e).abs() > 1e-6 * h) || *t == 0.0 || *t == hi)
        .collect();
    g.extend(extra);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

fn solve(grid: &[f64], x: &[f64], w: &[f64], density: bool) -> OracleFit {
    let n = grid.len() - 1;
    let h: Vec<f64> = grid.windows(2).map(|p| p[1] - p[0]).collect();

    // Mass matrix of the hat basis, upper triangle.
    let (mut pi, mut pj, mut pv) = (vec![], vec![], vec![]);
    for j in 0..=n {
        let left = if j > 0 { h[j - 1] } else { 0.0 };
        let right = if j < n { h[j] } else { 0.0 };
        pi.push(j);
        pj.push(j);
        pv.push((left + right) / 3.0);
        if j < n {
            pi.push(j);
            pj.push(j + 1);
            pv.push(h[j] / 6.0);
        }
    }
    let p = CscMatrix::new_from_triplets(n + 1, n + 1, pi, pj, pv);

    let mut q = vec![0.0; n + 1];
    let scale = 1.0 / x.len() as f64;
    for (&xi, &wi) in x.iter().zip(w) {
        let j = grid.partition_point(|&s| s <= xi).clamp(1, n) - 1;
        let u = (xi - grid[j]) / h[j];
        q[j] -= scale * wi * (1.0 - u);
        q[j + 1] -= scale * wi * u;
    }

    let (mut ai, mut aj, mut av, mut b) = (vec![], vec![], vec![], vec![]);
    let mut row = 0;
    let mut cones = vec![];
    if density {
        for j in 0..=n {
            let left = if j > 0 { h[j - 1] } else { 0.0 };
            let right = if j < n { h[j] } else { 0.0 };
            ai.push(0);
            aj.push(j);
            av.push(0.5 * (left + right));
        }
        b.push(1.0);
        row += 1;
        cones.push(SupportedConeT::ZeroConeT(1));
    }
    let first_ineq = row;
    for j in 1..n {
        // -(slope increase at node j)
        for (k, c) in [(j - 1, 1.0 / h[j - 1]), (j, -1.0 / h[j - 1] - 1.0 / h[j]), (j + 1, 1.0 / h[j])] {
            ai.push(row);
            aj.push(k);
            av.push(-c);
        }
        b.push(0.0);
        row += 1;
    }
    if density {
        for j in 0..=n {
            ai.push(row);
            aj.push(j);
            av.push(-1.0);
            b.push(0.0);
            row += 1;
        }
    }
    cones.push(SupportedConeT::NonnegativeConeT(row - first_ineq));
    let a = CscMatrix::new_from_triplets(row, n + 1, ai, aj, av);

    let settings = DefaultSettingsBuilder::default()
        .verbose(std::env::var("ORACLE_VERBOSE").is_ok())
        .max_iter(500)
        .tol_gap_abs(1e-12)
        .tol_gap_rel(1e-12)
        .tol_feas(1e-12)
        .tol_ktratio(1e-10)
        .build()
        .unwrap();
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).unwrap();
    solver.solve();
    assert!(
        matches!(solver.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved),
        "oracle QP status {:?}",
        solver.solution.status
    );
    OracleFit {
        grid: grid.to_vec(),
        g: solver.solution.x.clone(),
    }
}
