//! Test of the triangular null `f0(t) = 2(1 - t)` on `[0, 1]` against a
//! general convex decreasing density, based on
//! `T_n = √n sup_t {f0(t) - f̂_n(t)}` and Monte Carlo quantiles of its limit
//! `T = -inf H''`.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{input, Error, Result};
use crate::estimator::{fit_convex_density, ConvexFit, EmpiricalMeasure, Mode, SolverOptions};
use crate::invelope::{InvelopeOptions, TimeChange};
use crate::pwl::PiecewiseLinear;

const DEFAULT_TABLE: &str = include_str!("../data/quantile_table.json");

/// Upper quantiles `t_α` of `T`, with `α` increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub alphas: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub n_sims: usize,
    pub m: usize,
    pub seed: u64,
    /// Bootstrap standard error of each quantile.
    pub stderr: Vec<f64>,
    /// Bridge time change the table was simulated with.
    #[serde(default)]
    pub time_change: TimeChange,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<InvelopeOptions>,
    /// Replicates whose invelope schedule ran out.
    #[serde(default)]
    pub unconverged: usize,
}

impl QuantileTable {
    /// The table shipped with the crate (2×10⁴ simulations on an 800-step
    /// grid).
    pub fn shipped() -> Self {
        Self::from_json(DEFAULT_TABLE).expect("shipped table is valid")
    }

    /// Empirical upper quantiles `T_(⌈N(1-α)⌉)` of `samples`.
    pub fn from_samples(samples: &[f64], alphas: &[f64], m: usize, seed: u64) -> Result<Self> {
        let n = samples.len();
        if n < 2 || samples.iter().any(|v| !v.is_finite()) {
            return input("need at least two finite samples");
        }
        let mut alphas = alphas.to_vec();
        if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return input("levels must lie in (0, 1)");
        }
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut quantiles = Vec::with_capacity(alphas.len());
        let mut stderr = Vec::with_capacity(alphas.len());
        for &a in &alphas {
            let r = order_index(n, a);
            quantiles.push(sorted[r - 1]);
            stderr.push(order_stat_bootstrap_se(&sorted, r));
        }
        let t = Self {
            alphas,
            quantiles,
            n_sims: n,
            m,
            seed,
            stderr,
            time_change: TimeChange::Standard,
            options: None,
            unconverged: 0,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.alphas.len();
        if k == 0 || self.quantiles.len() != k || self.stderr.len() != k {
            return input("table columns must be nonempty and of equal length");
        }
        if self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) || self.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return input("levels must be increasing inside (0, 1)");
        }
        if self.quantiles.iter().any(|q| !(q.is_finite() && *q > 0.0)) {
            return input("quantiles must be positive");
        }
        if self.quantiles.windows(2).any(|w| w[0] <= w[1]) {
            return input("quantiles must strictly decrease in the level");
        }
        Ok(())
    }

    /// `t_α` and whether it was interpolated (linearly in `log α`) between
    /// adjacent table rows.
    pub fn t_alpha(&self, alpha: f64) -> Result<(f64, bool)> {
        let lo = self.alphas[0];
        let hi = self.alphas[self.alphas.len() - 1];
        let out = || Error::AlphaOutOfRange { alpha, lo, hi };
        if !alpha.is_finite() {
            return Err(out());
        }
        if let Some(i) = self.alphas.iter().position(|&a| (a - alpha).abs() <= 1e-12 * a) {
            return Ok((self.quantiles[i], false));
        }
        if alpha < lo || alpha > hi {
            return Err(out());
        }
        let i = self.alphas.partition_point(|&a| a < alpha);
        let (a0, a1) = (self.alphas[i - 1].ln(), self.alphas[i].ln());
        let w = (alpha.ln() - a0) / (a1 - a0);
        Ok((self.quantiles[i - 1] + w * (self.quantiles[i] - self.quantiles[i - 1]), true))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tables hold finite values")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }
}

/// 1-based rank of the upper `α` quantile among `n` order statistics.
fn order_index(n: usize, alpha: f64) -> usize {
    let r = (n as f64 * (1.0 - alpha) - 1e-9).ceil() as usize;
    r.clamp(1, n)
}

/// Exact bootstrap standard error of the `r`-th order statistic: under
/// resampling, `P(T*_(r) <= T_(j)) = P(Bin(n, j/n) >= r) = I_{j/n}(r, n-r+1)`.
fn order_stat_bootstrap_se(sorted: &[f64], r: usize) -> f64 {
    let n = sorted.len();
    let (a, b) = (r as f64, (n - r + 1) as f64);
    let mut prev = 0.0;
    let mut w = Vec::with_capacity(n);
    for j in 1..=n {
        let c = if j == n { 1.0 } else { beta_reg(a, b, j as f64 / n as f64) };
        w.push((c - prev).max(0.0));
        prev = c;
    }
    let mean: f64 = w.iter().zip(sorted).map(|(p, x)| p * x).sum();
    w.iter().zip(sorted).map(|(p, x)| p * (x - mean).powi(2)).sum::<f64>().sqrt()
}

/// Outcome of the linearity test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub t_n: f64,
    pub alpha: f64,
    pub t_alpha: f64,
    /// `t_n > t_alpha`.
    pub reject: bool,
    pub n: usize,
    /// The critical value was interpolated between table rows.
    pub interpolated: bool,
}

/// `√n sup_{t >= 0} {f0(t) - f(t)}` for a density estimate `f` that vanishes
/// beyond its last breakpoint.
///
/// The difference is piecewise linear, so the supremum over
/// `[0, max(1, last breakpoint)]` is attained at a breakpoint of either
/// function; past that range it is `-f <= 0`, tending to 0, so the result
/// is floored at 0.
pub fn statistic_of_estimate(estimate: &PiecewiseLinear, n: usize) -> f64 {
    let null = |t: f64| if t <= 1.0 { 2.0 * (1.0 - t) } else { 0.0 };
    let bp = estimate.breakpoints();
    let end = bp[bp.len() - 1].max(1.0);
    let sup = bp
        .iter()
        .copied()
        .chain([0.0, 1.0, end])
        .filter(|&t| (0.0..=end).contains(&t))
        .map(|t| null(t) - estimate.eval(t))
        .fold(f64::NEG_INFINITY, f64::max);
    (n as f64).sqrt() * sup.max(0.0)
}

/// Fit the density LSE and return `T_n` with the fit.
pub fn t_statistic(sample: &EmpiricalMeasure, opts: &SolverOptions) -> Result<(f64, ConvexFit)> {
    if sample.mode() != Mode::Density {
        return Err(Error::Mode("the linearity test needs a density sample".into()));
    }
    let fit = fit_convex_density(sample, opts)?;
    Ok((statistic_of_estimate(&fit.estimate, sample.n()), fit))
}

/// Compare `t_n` with the table's critical value at `alpha`.
pub fn decide(t_n: f64, n: usize, alpha: f64, table: &QuantileTable) -> Result<TestDecision> {
    let (t_alpha, interpolated) = table.t_alpha(alpha)?;
    Ok(TestDecision {
        t_n,
        alpha,
        t_alpha,
        reject: t_n > t_alpha,
        n,
        interpolated,
    })
}

/// Fit, compute `T_n` and decide at level `alpha`.
pub fn linearity_test(sample: &EmpiricalMeasure, alpha: f64, table: &QuantileTable) -> Result<TestDecision> {
    table.t_alpha(alpha)?;
    let (t_n, _) = t_statistic(sample, &SolverOptions::default())?;
    decide(t_n, sample.n(), alpha, table)
}
