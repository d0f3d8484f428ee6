use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::pwl::StepFn;

/// Whether a measure or fit concerns density estimation or regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Density,
    Regression,
}

/// The data side of a convex least squares problem: a finite signed measure
/// `sum_i mass_i δ_{x_i}` on sorted distinct points.
///
/// In density mode the masses are multiplicities divided by `n`; in
/// regression mode they are the responses divided by `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    mode: Mode,
    points: Vec<f64>,
    mass: Vec<f64>,
    n: usize,
    // cum_w[k] = sum of mass over the first k points, cum_wx likewise for mass * x.
    cum_w: Vec<f64>,
    cum_wx: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Empirical distribution of the observations. Ties are merged into
    /// weighted atoms.
    pub fn density(mut obs: Vec<f64>) -> Result<Self> {
        if obs.iter().any(|x| !x.is_finite()) {
            return input("observations must be finite");
        }
        if obs.iter().any(|&x| x < 0.0) {
            return input("density observations must be nonnegative");
        }
        let n = obs.len();
        obs.sort_by(f64::total_cmp);
        let mut points = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for x in obs {
            if points.last() == Some(&x) {
                *counts.last_mut().unwrap() += 1;
            } else {
                points.push(x);
                counts.push(1);
            }
        }
        if points.len() < 2 {
            return input("need at least two distinct observations");
        }
        let nf = n as f64;
        let mass = counts.iter().map(|&c| c as f64 / nf).collect();
        let mut cum_w = Vec::with_capacity(points.len() + 1);
        let mut cum_wx = Vec::with_capacity(points.len() + 1);
        cum_w.push(0.0);
        cum_wx.push(0.0);
        let (mut c, mut sx) = (0usize, 0.0);
        for (x, k) in points.iter().zip(&counts) {
            c += k;
            sx += *k as f64 * x;
            cum_w.push(c as f64 / nf);
            cum_wx.push(sx / nf);
        }
        Ok(Self {
            mode: Mode::Density,
            points,
            mass,
            n,
            cum_w,
            cum_wx,
        })
    }

    /// Regression data on strictly increasing design points in `(0, 1)`.
    pub fn regression(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return input("design and responses differ in length");
        }
        if x.len() < 2 {
            return input("need at least two design points");
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return input("design points and responses must be finite");
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return input("design points must be strictly increasing");
        }
        if x[0] <= 0.0 || x[x.len() - 1] >= 1.0 {
            return input("design points must lie in (0, 1)");
        }
        let n = x.len();
        let nf = n as f64;
        let mut cum_w = Vec::with_capacity(n + 1);
        let mut cum_wx = Vec::with_capacity(n + 1);
        cum_w.push(0.0);
        cum_wx.push(0.0);
        let (mut s, mut sx) = (0.0, 0.0);
        for (xi, yi) in x.iter().zip(&y) {
            s += yi;
            sx += yi * xi;
            cum_w.push(s / nf);
            cum_wx.push(sx / nf);
        }
        let mass = y.iter().map(|v| v / nf).collect();
        Ok(Self {
            mode: Mode::Regression,
            points: x,
            mass,
            n,
            cum_w,
            cum_wx,
        })
    }

    /// Regression data on the fixed design `i / (n + 1)`.
    pub fn regression_fixed_design(y: Vec<f64>) -> Result<Self> {
        let x = crate::stochastic::fixed_design(y.len());
        Self::regression(x, y)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Distinct sorted support points.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Number of observations (with multiplicity).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Responses (regression) or multiplicities (density) per point.
    pub fn responses(&self) -> Vec<f64> {
        let nf = self.n as f64;
        self.mass.iter().map(|m| m * nf).collect()
    }

    pub fn min_point(&self) -> f64 {
        self.points[0]
    }

    pub fn max_point(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Right-continuous cumulative mass: the empirical distribution function
    /// in density mode, `t -> (1/n) sum_{X_i <= t} Y_i` in regression mode.
    pub fn cumulative(&self) -> StepFn {
        StepFn::new(self.points.clone(), self.mass.clone(), 0.0).expect("points are sorted and finite")
    }

    pub(crate) fn count_le(&self, t: f64) -> usize {
        self.points.partition_point(|&x| x <= t)
    }

    pub(crate) fn count_lt(&self, t: f64) -> usize {
        self.points.partition_point(|&x| x < t)
    }

    pub(crate) fn cum_w(&self, k: usize) -> f64 {
        self.cum_w[k]
    }

    pub(crate) fn cum_wx(&self, k: usize) -> f64 {
        self.cum_wx[k]
    }

    /// Cumulative mass up to and including `t`.
    pub fn w(&self, t: f64) -> f64 {
        self.cum_w[self.count_le(t)]
    }

    /// Cumulative mass strictly before `t`.
    pub fn w_left(&self, t: f64) -> f64 {
        self.cum_w[self.count_lt(t)]
    }

    /// `∫_0^t` of the cumulative mass, `sum_{x_i <= t} mass_i (t - x_i)`.
    pub fn integrated(&self, t: f64) -> f64 {
        let k = self.count_le(t);
        t * self.cum_w[k] - self.cum_wx[k]
    }

    /// CSV of the raw data, preceded by `# key=value` comment lines.
    /// Density: a single column `x` with repeated values; regression:
    /// columns `x,y`.
    pub fn to_csv(&self, header: &[(&str, String)]) -> String {
        let mut s = String::new();
        for (k, v) in header {
            let _ = writeln!(s, "# {k}={v}");
        }
        match self.mode {
            Mode::Density => {
                s.push_str("x\n");
                for (x, m) in self.points.iter().zip(&self.mass) {
                    let c = (m * self.n as f64).round() as usize;
                    for _ in 0..c {
                        let _ = writeln!(s, "{x}");
                    }
                }
            }
            Mode::Regression => {
                s.push_str("x,y\n");
                for (x, y) in self.points.iter().zip(self.responses()) {
                    let _ = writeln!(s, "{x},{y}");
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_merge_into_atoms() {
        let m = EmpiricalMeasure::density(vec![0.5, 0.1, 0.5, 0.9]).unwrap();
        assert_eq!(m.points(), &[0.1, 0.5, 0.9]);
        assert_eq!(m.masses(), &[0.25, 0.5, 0.25]);
        assert_eq!(m.n(), 4);
        assert_eq!(m.w(0.5), 0.75);
        assert_eq!(m.w_left(0.5), 0.25);
        assert!((m.integrated(1.0) - (0.9 * 0.25 + 0.5 * 0.5 + 0.1 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_samples() {
        assert!(EmpiricalMeasure::density(vec![0.3, 0.3]).is_err());
        assert!(EmpiricalMeasure::density(vec![-0.1, 0.3]).is_err());
        assert!(EmpiricalMeasure::density(vec![f64::NAN, 0.3]).is_err());
        assert!(EmpiricalMeasure::regression(vec![0.0, 0.5], vec![1.0, 1.0]).is_err());
        assert!(EmpiricalMeasure::regression(vec![0.5, 0.4], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn regression_masses_are_scaled_responses() {
        let m = EmpiricalMeasure::regression_fixed_design(vec![2.0, -1.0, 4.0]).unwrap();
        assert_eq!(m.points(), &[0.25, 0.5, 0.75]);
        assert_eq!(m.responses(), vec![2.0, -1.0, 4.0]);
        assert!((m.w(1.0) - 5.0 / 3.0).abs() < 1e-15);
    }
}
