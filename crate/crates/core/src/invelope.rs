//! The invelope process: the limit of the rescaled convex LSE on a linear
//! region.
//!
//! For a Gaussian path `X` with integral `Y` on `[a, b]`, the invelope `H`
//! satisfies `H >= Y`, `H''` convex, `H = Y` and `H' = X` at both ends, and
//! `∫ (H - Y) dH''' = 0`. It is built by minimising
//! `φ(g) = ½∫g² - ∫g dX` over convex `g` with `g(a) = g(b) = k` for a growing
//! sequence of `k`, and integrating the minimiser twice with `H = Y` at both
//! ends.
//!
//! On the uniform grid `t_0 < ... < t_L` the stochastic integral pairs the
//! interior value `g_i` with the increment of `X` over the cell
//! `[t_{i-1/2}, t_{i+1/2}]`, midpoint values taken as averages; the end
//! half-cells go to `g_1` and `g_{L-1}`, so the weights `ξ_i` sum to
//! `X(b) - X(a)`. `Y` is integrated consistently: trapezoid rule on inner
//! cells, and `X(a)`, `X(b)` on the two end cells. Then `Δ²Y_i = Δ ξ_i` and
//! the optimality conditions of the discrete problem are exactly `H >= Y`
//! with equality at the kinks of `g`, `H` being the discrete double integral
//! of `g`. Because the weights telescope, `sum g_i <= 0` for a bridge and the
//! discrete `T` is nonnegative, as in the limit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::stochastic::{gaussian_path_with, rng, GaussianPath, PathKind, TruthSpec};

/// Controls for [`compute_invelope`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvelopeOptions {
    /// Boundary values `k`, tried in turn.
    pub k_schedule: Vec<f64>,
    /// Convergence is judged on `[a + δ(b - a), b - δ(b - a)]`.
    pub interior_margin: f64,
    /// Stop once `g` moves by at most this much on the interior between
    /// consecutive `k`.
    pub stop_tol: f64,
    /// Stopping also needs `|H' - X|` at both ends below this.
    pub boundary_tol: f64,
    /// Feasibility tolerance on `H - Y`.
    pub qp_tol: f64,
    /// Support reduction steps allowed for one `k`.
    pub qp_max_iter: usize,
    /// Start each `k` from the previous solution shifted by the change in
    /// `k`; otherwise every `k` starts from the constant `g = k`.
    pub warm_start: bool,
}

impl Default for InvelopeOptions {
    fn default() -> Self {
        Self {
            k_schedule: (1..=14).map(|j| f64::powi(2.0, j)).collect(),
            interior_margin: 0.05,
            stop_tol: 1e-3,
            boundary_tol: 1e-6,
            qp_tol: 1e-10,
            qp_max_iter: 10_000,
            warm_start: true,
        }
    }
}

impl InvelopeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.k_schedule.is_empty()
            || self.k_schedule.iter().any(|k| !(k.is_finite() && *k > 0.0))
            || self.k_schedule.windows(2).any(|w| w[0] >= w[1])
        {
            return input("k schedule must be positive and strictly increasing");
        }
        if !(self.interior_margin > 0.0 && self.interior_margin < 0.5) {
            return input("interior margin must lie in (0, 0.5)");
        }
        if !(self.stop_tol > 0.0) || !(self.boundary_tol > 0.0) || !(self.qp_tol > 0.0) || self.qp_max_iter == 0 {
            return input("tolerances and the iteration cap must be positive");
        }
        Ok(())
    }
}

/// How well a computed invelope meets its defining conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResiduals {
    /// `min (H - Y)` over the grid.
    pub min_gap: f64,
    /// `|H(a) - Y(a)|`.
    pub start_value: f64,
    /// `|H(b) - Y(b)|`.
    pub end_value: f64,
    /// `|H'(a) - X(a)|`.
    pub start_slope: f64,
    /// `|H'(b) - X(b)|`.
    pub end_slope: f64,
    /// `|∫ (H - Y) dH'''|`.
    pub fubini: f64,
    /// Smallest second difference of `H''` on the grid.
    pub min_convexity: f64,
}

/// Record of one boundary value in the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub k: f64,
    /// `½Δ sum g_i² - sum g_i ξ_i` over interior grid points. Nonincreasing
    /// in `k` since a larger `k` only relaxes the constraints.
    pub objective: f64,
    /// `objective` plus the trapezoid weight of the boundary values in
    /// `½∫g²`.
    pub trapezoid_objective: f64,
    /// Interior sup-change of `g` from the previous `k`.
    pub sup_change: Option<f64>,
    pub knots: usize,
    pub iterations: usize,
    pub start_slope: f64,
    pub end_slope: f64,
}

/// An invelope on a uniform grid over `interval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvelopeResult {
    pub kind: PathKind,
    pub interval: [f64; 2],
    pub grid: Vec<f64>,
    /// The discrete integral of `X` that `H` is matched against; it differs
    /// from the path's trapezoid `Y` only through the two end cells.
    pub y: Vec<f64>,
    pub h: Vec<f64>,
    pub h1: Vec<f64>,
    /// `H'' = g`, with `g = k` at both ends.
    pub h2: Vec<f64>,
    /// Slope of `g` on `[t_i, t_{i+1})`; the last entry repeats the final
    /// slope.
    pub h3: Vec<f64>,
    /// Kinks of `g`.
    pub knots: Vec<f64>,
    pub k_final: f64,
    pub converged: bool,
    pub residuals: ConditionResiduals,
    pub history: Vec<ScheduleStep>,
}

impl InvelopeResult {
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let [a, b] = self.interval;
        if !(t >= a && t <= b) {
            return Err(Error::Domain(format!("{t} outside [{a}, {b}]")));
        }
        let l = self.grid.len() - 1;
        let s = (t - a) / (b - a) * l as f64;
        let i = (s.floor() as usize).min(l - 1);
        Ok((i, s - i as f64))
    }

    /// `H''(t)` by linear interpolation.
    pub fn second_derivative_at(&self, t: f64) -> Result<f64> {
        let (i, w) = self.locate(t)?;
        Ok(self.h2[i] + w * (self.h2[i + 1] - self.h2[i]))
    }

    /// `H'''(t)`, right-continuous (left limit at `b`).
    pub fn third_derivative_at(&self, t: f64) -> Result<f64> {
        let (i, w) = self.locate(t)?;
        Ok(if w >= 1.0 { self.h3[i + 1] } else { self.h3[i] })
    }

    /// Columns `t,X,Y,H,H1,H2,H3` for a path sharing this grid.
    pub fn to_csv(&self, path: &GaussianPath, header: &[(&str, String)]) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        for (k, v) in header {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str("t,x,y,h,h1,h2,h3\n");
        let off = ((self.interval[0] * path.m() as f64).round()) as usize;
        for i in 0..self.grid.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.grid[i],
                path.x[off + i],
                self.y[i],
                self.h[i],
                self.h1[i],
                self.h2[i],
                self.h3[i]
            );
        }
        s
    }
}

/// `T = -min H''` over the interior grid.
#[allow(non_snake_case)]
pub fn limit_T(inv: &InvelopeResult) -> f64 {
    let l = inv.h2.len() - 1;
    -inv.h2[1..l].iter().copied().fold(f64::INFINITY, f64::min)
}

/// Limits of the rescaled regression estimate and its derivative at `x` for
/// a linear region `[a, b]` and noise level `sigma0`, from an invelope of
/// Brownian motion on `[0, 1]`.
pub fn rescale_regression_limit(inv: &InvelopeResult, a: f64, b: f64, sigma0: f64, x: f64) -> Result<(f64, f64)> {
    if inv.kind != PathKind::Motion {
        return Err(Error::Mode("regression limits need a Brownian motion invelope".into()));
    }
    if inv.interval != [0.0, 1.0] {
        return input("regression limits need an invelope on [0, 1]");
    }
    if !(sigma0 >= 0.0 && sigma0.is_finite()) {
        return input("noise level must be finite and nonnegative");
    }
    if !(a < x && x < b) {
        return Err(Error::Domain(format!("{x} not inside ({a}, {b})")));
    }
    let w = b - a;
    let u = (x - a) / w;
    Ok((
        sigma0 * w.sqrt() * inv.second_derivative_at(u)?,
        sigma0 * inv.third_derivative_at(u)? / w.sqrt(),
    ))
}

/// Invelope of `path` over `interval`, whose ends must be grid points.
pub fn compute_invelope(path: &GaussianPath, interval: [f64; 2], opts: &InvelopeOptions) -> Result<InvelopeResult> {
    opts.validate()?;
    let m = path.m();
    let [a, b] = interval;
    let ia = (a * m as f64).round();
    let ib = (b * m as f64).round();
    if !(a >= 0.0 && b <= 1.0 && a < b)
        || (ia / m as f64 - a).abs() > 1e-9
        || (ib / m as f64 - b).abs() > 1e-9
    {
        return input("interval ends must be grid points inside [0, 1]");
    }
    let (ia, ib) = (ia as usize, ib as usize);
    if ib - ia < 4 {
        return input("interval must span at least four grid steps");
    }
    let qp = Qp::new(path, ia, ib);
    let l = qp.l;
    let lo = ((opts.interior_margin * l as f64).ceil() as usize).max(1);
    let hi = l - lo;

    let mut history = Vec::with_capacity(opts.k_schedule.len());
    let mut prev: Option<(f64, Iterate, Vec<f64>)> = None;
    let mut converged = false;
    for &k in &opts.k_schedule {
        let start = match (&prev, opts.warm_start) {
            (Some((k0, it, _)), true) => Some(Iterate {
                nodes: it.nodes.clone(),
                vals: it.vals.iter().map(|v| v + (k - k0)).collect(),
            }),
            _ => None,
        };
        let (it, iterations) = qp.minimise(k, start, opts)?;
        let g = qp.expand(&it);
        let e = qp.gap(&g);
        let sup_change = prev
            .as_ref()
            .map(|(_, _, g0)| (lo..=hi).map(|i| (g[i] - g0[i]).abs()).fold(0.0, f64::max));
        let objective = qp.objective(&g);
        let start_slope = (e[1] - e[0]).abs() / qp.dt;
        let end_slope = (e[l] - e[l - 1]).abs() / qp.dt;
        history.push(ScheduleStep {
            k,
            objective,
            trapezoid_objective: objective + 0.5 * qp.dt * k * k,
            sup_change,
            knots: it.nodes.len() - 2,
            iterations,
            start_slope,
            end_slope,
        });
        prev = Some((k, it, g));
        if sup_change.is_some_and(|s| s <= opts.stop_tol) && start_slope.max(end_slope) <= opts.boundary_tol {
            converged = true;
            break;
        }
    }
    let (k, it, g) = prev.expect("schedule is nonempty");
    let result = qp.result(path, interval, k, &it, g, converged, history);
    if converged {
        Ok(result)
    } else {
        Err(Error::InvelopeSchedule {
            k,
            last: Box::new(result),
        })
    }
}

/// Time change of the Brownian bridge used for simulating `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeChange {
    /// `X(t) = U(t)`.
    #[default]
    Standard,
    /// `X(t) = U(F0(t))` with `F0` the triangular distribution function.
    Triangular,
}

impl TimeChange {
    pub fn truth(self) -> TruthSpec {
        match self {
            TimeChange::Standard => TruthSpec::uniform(),
            TimeChange::Triangular => TruthSpec::triangular(),
        }
    }
}

/// Draws of `T` from independent bridge paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSample {
    pub values: Vec<f64>,
    /// Replicates whose schedule ran out; their last iterate is used.
    pub unconverged: usize,
}

/// `n_sims` replicates of `T` on grids of `m` intervals. Replicate `i` uses
/// random stream `i` of `seed`, so the output does not depend on the thread
/// count.
pub fn simulate_limit_t(
    n_sims: usize,
    m: usize,
    time_change: TimeChange,
    opts: &InvelopeOptions,
    seed: u64,
) -> Result<LimitSample> {
    opts.validate()?;
    let truth = time_change.truth();
    let draws: Vec<(f64, bool)> = (0..n_sims)
        .into_par_iter()
        .map(|i| {
            let path = gaussian_path_with(m, PathKind::Bridge, Some(&truth), &mut rng(seed, i as u64))?;
            match compute_invelope(&path, [0.0, 1.0], opts) {
                Ok(inv) => Ok((limit_T(&inv), true)),
                Err(Error::InvelopeSchedule { last, .. }) => Ok((limit_T(&last), false)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    Ok(LimitSample {
        unconverged: draws.iter().filter(|d| !d.1).count(),
        values: draws.into_iter().map(|d| d.0).collect(),
    })
}

/// Monte Carlo upper quantiles of `T` from standard bridge paths.
pub fn estimate_quantiles(
    n_sims: usize,
    alphas: &[f64],
    m: usize,
    opts: &InvelopeOptions,
    seed: u64,
) -> Result<crate::lintest::QuantileTable> {
    estimate_quantiles_with(n_sims, alphas, m, TimeChange::Standard, opts, seed)
}

/// [`estimate_quantiles`] with a chosen bridge time change.
pub fn estimate_quantiles_with(
    n_sims: usize,
    alphas: &[f64],
    m: usize,
    time_change: TimeChange,
    opts: &InvelopeOptions,
    seed: u64,
) -> Result<crate::lintest::QuantileTable> {
    if n_sims < 100 {
        return input("at least 100 simulations are needed");
    }
    let sample = simulate_limit_t(n_sims, m, time_change, opts, seed)?;
    let mut table = crate::lintest::QuantileTable::from_samples(&sample.values, alphas, m, seed)?;
    table.time_change = time_change;
    table.options = Some(opts.clone());
    table.unconverged = sample.unconverged;
    Ok(table)
}

/// Knot indices (including both ends) and the values of `g` there.
#[derive(Debug, Clone)]
struct Iterate {
    nodes: Vec<usize>,
    vals: Vec<f64>,
}

/// The discrete problem for one path and interval.
struct Qp {
    l: usize,
    dt: f64,
    /// `ξ_i`, zero at both ends.
    xi: Vec<f64>,
    /// Prefix sums `sum_{i<j} ξ_i` and `sum_{i<j} i ξ_i`.
    s0: Vec<f64>,
    s1: Vec<f64>,
    /// Integral of `X` from `a` matching the weights.
    y: Vec<f64>,
}

/// `sum_{m=1}^{h} (m/h)²`.
fn hat_sq(h: usize) -> f64 {
    let h = h as f64;
    (h + 1.0) * (2.0 * h + 1.0) / (6.0 * h)
}

/// `sum_{m=1}^{h-1} (m/h)(1 - m/h)`.
fn hat_cross(h: usize) -> f64 {
    let h = h as f64;
    (h * h - 1.0) / (6.0 * h)
}

impl Qp {
    fn new(path: &GaussianPath, ia: usize, ib: usize) -> Self {
        let l = ib - ia;
        let x = &path.x[ia..=ib];
        let dt = path.grid[1] - path.grid[0];
        let mut xi = vec![0.0; l + 1];
        for i in 1..l {
            let lo = if i == 1 { x[0] } else { 0.5 * (x[i - 1] + x[i]) };
            let hi = if i + 1 == l { x[l] } else { 0.5 * (x[i] + x[i + 1]) };
            xi[i] = hi - lo;
        }
        let mut y = vec![path.y[ia]; l + 1];
        for i in 0..l {
            let step = if i == 0 {
                x[0]
            } else if i + 1 == l {
                x[l]
            } else {
                0.5 * (x[i] + x[i + 1])
            };
            y[i + 1] = y[i] + dt * step;
        }
        let mut s0 = vec![0.0; l + 2];
        let mut s1 = vec![0.0; l + 2];
        for i in 0..=l {
            s0[i + 1] = s0[i] + xi[i];
            s1[i + 1] = s1[i] + i as f64 * xi[i];
        }
        Self { l, dt, xi, s0, s1, y }
    }

    /// `sum_{i=u}^{w-1} (i - p) ξ_i`.
    fn moment(&self, u: usize, w: usize, p: usize) -> f64 {
        (self.s1[w] - self.s1[u]) - p as f64 * (self.s0[w] - self.s0[u])
    }

    /// Unconstrained minimiser with kinks allowed only at `nodes`.
    fn solve(&self, nodes: &[usize], k: f64) -> Vec<f64> {
        let f = nodes.len() - 2;
        let mut vals = vec![k; f + 2];
        if f == 0 {
            return vals;
        }
        let mut diag = vec![0.0; f];
        let mut off = vec![0.0; f];
        let mut rhs = vec![0.0; f];
        for j in 0..f {
            let (p, n, q) = (nodes[j], nodes[j + 1], nodes[j + 2]);
            let (hl, hr) = (n - p, q - n);
            diag[j] = hat_sq(hl) + hat_sq(hr) - 1.0;
            off[j] = hat_cross(hr);
            // Rising part on (p, n], falling part on (n, q).
            let load = self.moment(p + 1, n + 1, p) / hl as f64 + (q as f64 * (self.s0[q] - self.s0[n + 1]) - (self.s1[q] - self.s1[n + 1])) / hr as f64;
            let mut r = load / self.dt;
            if j == 0 {
                r -= k * hat_cross(hl);
            }
            if j + 1 == f {
                r -= k * hat_cross(hr);
            }
            rhs[j] = r;
        }
        // Thomas algorithm.
        let mut c = vec![0.0; f];
        let mut d = vec![0.0; f];
        for j in 0..f {
            let mut den = diag[j];
            let mut r = rhs[j];
            if j > 0 {
                den -= off[j - 1] * c[j - 1];
                r -= off[j - 1] * d[j - 1];
            }
            c[j] = off[j] / den;
            d[j] = r / den;
        }
        for j in (0..f).rev() {
            vals[j + 1] = d[j] - if j + 1 < f { c[j] * vals[j + 2] } else { 0.0 };
        }
        vals
    }

    /// Slope changes (per grid step) at the interior nodes.
    fn kinks(nodes: &[usize], vals: &[f64]) -> Vec<f64> {
        (1..nodes.len() - 1)
            .map(|j| {
                (vals[j + 1] - vals[j]) / (nodes[j + 1] - nodes[j]) as f64
                    - (vals[j] - vals[j - 1]) / (nodes[j] - nodes[j - 1]) as f64
            })
            .collect()
    }

    fn expand(&self, it: &Iterate) -> Vec<f64> {
        let mut g = vec![0.0; self.l + 1];
        for (w, v) in it.nodes.windows(2).zip(it.vals.windows(2)) {
            let h = (w[1] - w[0]) as f64;
            for i in w[0]..=w[1] {
                let s = (i - w[0]) as f64 / h;
                g[i] = v[0] + s * (v[1] - v[0]);
            }
        }
        g
    }

    /// `H - Y` on the grid, where `H` has second differences `Δ² g_i` and
    /// matches `Y` at both ends.
    fn gap(&self, g: &[f64]) -> Vec<f64> {
        let l = self.l;
        let dt = self.dt;
        let mut p = vec![0.0; l + 1];
        for i in 1..l {
            let r = dt * (dt * g[i] - self.xi[i]);
            p[i + 1] = 2.0 * p[i] - p[i - 1] + r;
        }
        let end = p[l];
        (0..=l).map(|i| p[i] - i as f64 / l as f64 * end).collect()
    }

    fn objective(&self, g: &[f64]) -> f64 {
        (1..self.l).map(|i| g[i] * (0.5 * self.dt * g[i] - self.xi[i])).sum()
    }

    /// Move from the feasible `cur` towards the solution on `nodes` (a
    /// superset of its knots), dropping knots whose slope change would turn
    /// negative.
    fn reduce(&self, cur: &Iterate, mut nodes: Vec<usize>, k: f64) -> Iterate {
        let g = self.expand(cur);
        let mut old: Vec<f64> = nodes.iter().map(|&i| g[i]).collect();
        loop {
            let new = self.solve(&nodes, k);
            let dn = Self::kinks(&nodes, &new);
            if dn.iter().all(|&d| d > 0.0) {
                return Iterate { nodes, vals: new };
            }
            let d0 = Self::kinks(&nodes, &old);
            // Step to the first slope change that reaches zero.
            let (drop, lam) = d0
                .iter()
                .zip(&dn)
                .enumerate()
                .filter(|(_, (_, &b))| b <= 0.0)
                .map(|(j, (&a, &b))| (j + 1, if a > b { (a.max(0.0) / (a - b)).min(1.0) } else { 0.0 }))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("some slope change is not positive");
            for (o, n) in old.iter_mut().zip(&new) {
                *o += lam * (n - *o);
            }
            let dl = Self::kinks(&nodes, &old);
            let scale = dl.iter().fold(0.0f64, |s, d| s.max(d.abs()));
            let keep: Vec<bool> = (0..nodes.len())
                .map(|j| j == 0 || j + 1 == nodes.len() || (j != drop && dl[j - 1] > 1e-14 * scale))
                .collect();
            nodes = nodes.iter().zip(&keep).filter(|p| *p.1).map(|p| *p.0).collect();
            old = old.iter().zip(&keep).filter(|p| *p.1).map(|p| *p.0).collect();
        }
    }

    /// Support reduction for boundary value `k`.
    fn minimise(&self, k: f64, start: Option<Iterate>, opts: &InvelopeOptions) -> Result<(Iterate, usize)> {
        let mut cur = match start {
            Some(s) => {
                let nodes = s.nodes.clone();
                self.reduce(&s, nodes, k)
            }
            None => Iterate {
                nodes: vec![0, self.l],
                vals: vec![k, k],
            },
        };
        let mut obj = self.objective(&self.expand(&cur));
        for iter in 1..=opts.qp_max_iter {
            let e = self.gap(&self.expand(&cur));
            let mut cands = Vec::new();
            let mut worst = (0, 0.0);
            for w in cur.nodes.windows(2) {
                let Some((i, v)) = (w[0] + 1..w[1])
                    .map(|i| (i, e[i]))
                    .min_by(|x, y| x.1.total_cmp(&y.1))
                else {
                    continue;
                };
                if v < -opts.qp_tol {
                    cands.push(i);
                    if v < worst.1 {
                        worst = (i, v);
                    }
                }
            }
            if cands.is_empty() {
                return Ok((cur, iter - 1));
            }
            let mut accepted = false;
            for batch in [cands, vec![worst.0]] {
                let mut nodes = cur.nodes.clone();
                nodes.extend(batch);
                nodes.sort_unstable();
                let next = self.reduce(&cur, nodes, k);
                let no = self.objective(&self.expand(&next));
                if no < obj {
                    cur = next;
                    obj = no;
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                return Err(Error::Qp(format!(
                    "no descent at k = {k} with H - Y down to {:e}",
                    worst.1
                )));
            }
        }
        Err(Error::Qp(format!("iteration cap reached at k = {k}")))
    }

    #[allow(clippy::too_many_arguments)]
    fn result(
        &self,
        path: &GaussianPath,
        interval: [f64; 2],
        k: f64,
        it: &Iterate,
        g: Vec<f64>,
        converged: bool,
        history: Vec<ScheduleStep>,
    ) -> InvelopeResult {
        let l = self.l;
        let dt = self.dt;
        let off = (interval[0] * path.m() as f64).round() as usize;
        let x = &path.x[off..=off + l];
        let y = &self.y;
        let e = self.gap(&g);
        let h: Vec<f64> = (0..=l).map(|i| y[i] + e[i]).collect();
        let h1: Vec<f64> = (0..=l)
            .map(|i| {
                let de = if i == 0 {
                    (e[1] - e[0]) / dt
                } else if i == l {
                    (e[l] - e[l - 1]) / dt
                } else {
                    (e[i + 1] - e[i - 1]) / (2.0 * dt)
                };
                x[i] + de
            })
            .collect();
        let mut h3: Vec<f64> = g.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
        h3.push(h3[l - 1]);
        let kinks = Self::kinks(&it.nodes, &it.vals);
        let fubini = it.nodes[1..it.nodes.len() - 1]
            .iter()
            .zip(&kinks)
            .map(|(&i, d)| e[i] * d / dt)
            .sum::<f64>()
            .abs();
        let residuals = ConditionResiduals {
            min_gap: e.iter().copied().fold(f64::INFINITY, f64::min),
            start_value: (h[0] - y[0]).abs(),
            end_value: (h[l] - y[l]).abs(),
            start_slope: (h1[0] - x[0]).abs(),
            end_slope: (h1[l] - x[l]).abs(),
            fubini,
            min_convexity: (1..l).map(|i| g[i - 1] - 2.0 * g[i] + g[i + 1]).fold(f64::INFINITY, f64::min),
        };
        InvelopeResult {
            kind: path.kind,
            interval,
            grid: path.grid[off..=off + l].to_vec(),
            y: self.y.clone(),
            h,
            h1,
            h2: g,
            h3,
            knots: it.nodes[1..it.nodes.len() - 1].iter().map(|&i| path.grid[off + i]).collect(),
            k_final: k,
            converged,
            residuals,
            history,
        }
    }
}
