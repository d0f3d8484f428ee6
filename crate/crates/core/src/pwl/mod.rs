//! Continuous piecewise-linear functions, right-continuous step functions and
//! the piecewise polynomials obtained by integrating them.
//!
//! Every estimator in this crate is a [`PiecewiseLinear`]; empirical
//! distribution functions are [`StepFn`]s. Both convert losslessly into a
//! [`PiecewisePoly`], which is where antiderivatives and exact sup-norm
//! distances live.

mod poly;

pub(crate) use poly::quadratic_roots;
pub use poly::{sup_diff, PiecewisePoly, Poly, SupDiff, SupMode};

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Abscissae closer than this are merged by [`PiecewiseLinear::new_dedup`].
pub const DEDUP_TOL: f64 = 1e-12;

/// How a [`PiecewiseLinear`] is evaluated to the right of its last breakpoint.
/// Left of the first breakpoint the first segment is always extended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extension {
    /// Continue the terminal segment linearly.
    #[serde(rename = "extend")]
    Extend,
    /// Evaluate to zero beyond the last breakpoint.
    #[serde(rename = "clamp")]
    ClampZeroRight,
}

/// A continuous piecewise-linear function given by its breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PwlRepr", into = "PwlRepr")]
pub struct PiecewiseLinear {
    x: Vec<f64>,
    v: Vec<f64>,
    ext: Extension,
}

#[derive(Serialize, Deserialize)]
struct PwlRepr {
    x: Vec<f64>,
    v: Vec<f64>,
    ext: Extension,
}

impl TryFrom<PwlRepr> for PiecewiseLinear {
    type Error = Error;
    fn try_from(r: PwlRepr) -> Result<Self> {
        PiecewiseLinear::new(r.x, r.v, r.ext)
    }
}

impl From<PiecewiseLinear> for PwlRepr {
    fn from(f: PiecewiseLinear) -> Self {
        PwlRepr {
            x: f.x,
            v: f.v,
            ext: f.ext,
        }
    }
}

impl PiecewiseLinear {
    /// Build from strictly increasing breakpoints and finite values.
    pub fn new(x: Vec<f64>, v: Vec<f64>, ext: Extension) -> Result<Self> {
        if x.len() != v.len() {
            return input(format!(
                "breakpoints ({}) and values ({}) differ in length",
                x.len(),
                v.len()
            ));
        }
        if x.len() < 2 {
            return input("a piecewise-linear function needs at least two breakpoints");
        }
        if x.iter().chain(v.iter()).any(|t| !t.is_finite()) {
            return input("breakpoints and values must be finite");
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return input("breakpoints must be strictly increasing");
        }
        if ext == Extension::ClampZeroRight && v[v.len() - 1] < 0.0 {
            return input("clamp-to-zero-right requires a nonnegative last value");
        }
        Ok(Self { x, v, ext })
    }

    /// Like [`new`](Self::new), but first merges breakpoints that are within
    /// [`DEDUP_TOL`] of their left neighbour, keeping the leftmost value.
    pub fn new_dedup(x: Vec<f64>, v: Vec<f64>, ext: Extension) -> Result<Self> {
        if x.len() != v.len() {
            return input("breakpoints and values differ in length");
        }
        let mut xs = Vec::with_capacity(x.len());
        let mut vs = Vec::with_capacity(v.len());
        for (xi, vi) in x.into_iter().zip(v) {
            match xs.last() {
                Some(&last) if xi - last <= DEDUP_TOL => {}
                _ => {
                    xs.push(xi);
                    vs.push(vi);
                }
            }
        }
        Self::new(xs, vs, ext)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn extension(&self) -> Extension {
        self.ext
    }

    pub fn first(&self) -> f64 {
        self.x[0]
    }

    pub fn last(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// Segment slopes; `slopes()[i]` belongs to `[x[i], x[i+1]]`.
    pub fn slopes(&self) -> Vec<f64> {
        self.x
            .windows(2)
            .zip(self.v.windows(2))
            .map(|(x, v)| (v[1] - v[0]) / (x[1] - x[0]))
            .collect()
    }

    fn slope(&self, i: usize) -> f64 {
        (self.v[i + 1] - self.v[i]) / (self.x[i + 1] - self.x[i])
    }

    /// Index of the segment used to evaluate at `t` (clamped to valid range).
    fn segment(&self, t: f64) -> usize {
        let k = self.x.partition_point(|&b| b <= t);
        k.saturating_sub(1).min(self.x.len() - 2)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t > self.x[n - 1] && self.ext == Extension::ClampZeroRight {
            return 0.0;
        }
        let i = self.segment(t);
        let s = (t - self.x[i]) / (self.x[i + 1] - self.x[i]);
        // Exact at both breakpoints of the segment.
        if s == 1.0 {
            self.v[i + 1]
        } else {
            self.v[i] + s * (self.v[i + 1] - self.v[i])
        }
    }

    /// Slope of the segment immediately left of `t`.
    pub fn derivative_left(&self, t: f64) -> Result<f64> {
        let n = self.x.len();
        if !(t > self.x[0]) {
            return Err(Error::Domain(format!(
                "left derivative at or before the first breakpoint ({t})"
            )));
        }
        if t > self.x[n - 1] {
            return match self.ext {
                Extension::Extend => Ok(self.slope(n - 2)),
                Extension::ClampZeroRight => Ok(0.0),
            };
        }
        let i = self.x.partition_point(|&b| b < t) - 1;
        Ok(self.slope(i))
    }

    /// Slope of the segment immediately right of `t`.
    pub fn derivative_right(&self, t: f64) -> Result<f64> {
        let n = self.x.len();
        if !(t < self.x[n - 1]) {
            return Err(Error::Domain(format!(
                "right derivative at or beyond the last breakpoint ({t})"
            )));
        }
        if t < self.x[0] {
            return Ok(self.slope(0));
        }
        let i = self.x.partition_point(|&b| b <= t) - 1;
        Ok(self.slope(i))
    }

    /// Exact antiderivative taking value `anchor_v` at `anchor_x`.
    pub fn antiderivative(&self, anchor_x: f64, anchor_v: f64) -> PiecewisePoly {
        self.to_poly().antiderivative(anchor_x, anchor_v)
    }

    /// Slope changes `(breakpoint, right slope - left slope)` at every place
    /// the function can kink. Interior breakpoints always count; under
    /// clamp-to-zero-right the last breakpoint counts when the function is
    /// continuous there (value zero).
    pub fn slope_changes(&self) -> Vec<(f64, f64)> {
        let n = self.x.len();
        let s = self.slopes();
        let mut out: Vec<(f64, f64)> = (1..n - 1).map(|i| (self.x[i], s[i] - s[i - 1])).collect();
        if self.ext == Extension::ClampZeroRight && self.v[n - 1] == 0.0 {
            out.push((self.x[n - 1], -s[n - 2]));
        }
        out
    }

    /// Points where the slope increases by more than `tol`.
    pub fn knots(&self, tol: f64) -> Vec<f64> {
        self.slope_changes()
            .into_iter()
            .filter(|&(_, d)| d > tol)
            .map(|(t, _)| t)
            .collect()
    }

    /// True when no interior slope decrease exceeds `tol`.
    pub fn is_convex(&self, tol: f64) -> bool {
        let s = self.slopes();
        s.windows(2).all(|w| w[1] - w[0] >= -tol)
    }

    pub fn is_nonincreasing(&self, tol: f64) -> bool {
        self.v.windows(2).all(|w| w[1] - w[0] <= tol)
    }

    /// Exact integral over `[a, b]` honouring the extension policy.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let big = self.antiderivative(a, 0.0);
        big.eval(b)
    }

    pub fn to_poly(&self) -> PiecewisePoly {
        let n = self.x.len();
        let mut pieces = Vec::with_capacity(n + 1);
        pieces.push(Poly::new(self.x[0], vec![self.v[0], self.slope(0)]));
        for i in 0..n - 1 {
            pieces.push(Poly::new(self.x[i], vec![self.v[i], self.slope(i)]));
        }
        pieces.push(match self.ext {
            Extension::Extend => Poly::new(self.x[n - 1], vec![self.v[n - 1], self.slope(n - 2)]),
            Extension::ClampZeroRight => Poly::constant(self.x[n - 1], 0.0),
        });
        PiecewisePoly::from_parts(self.x.clone(), pieces)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite floats always serialise")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// A right-continuous step function: `base + sum of sizes[i] for jumps[i] <= t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFn {
    jumps: Vec<f64>,
    sizes: Vec<f64>,
    base: f64,
    // levels[i] = value on [jumps[i-1], jumps[i]); levels[0] = base.
    levels: Vec<f64>,
}

impl StepFn {
    pub fn new(jumps: Vec<f64>, sizes: Vec<f64>, base: f64) -> Result<Self> {
        if jumps.len() != sizes.len() {
            return input("jump locations and sizes differ in length");
        }
        if !base.is_finite() || jumps.iter().chain(sizes.iter()).any(|t| !t.is_finite()) {
            return input("step function data must be finite");
        }
        if jumps.windows(2).any(|w| w[1] <= w[0]) {
            return input("jump locations must be strictly increasing");
        }
        let mut levels = Vec::with_capacity(jumps.len() + 1);
        levels.push(base);
        let mut acc = base;
        for s in &sizes {
            acc += s;
            levels.push(acc);
        }
        Ok(Self {
            jumps,
            sizes,
            base,
            levels,
        })
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Right-continuous value at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        self.levels[self.jumps.partition_point(|&j| j <= t)]
    }

    /// Left limit at `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        self.levels[self.jumps.partition_point(|&j| j < t)]
    }

    pub fn to_poly(&self) -> PiecewisePoly {
        let mut pieces = Vec::with_capacity(self.levels.len());
        let first = self.jumps.first().copied().unwrap_or(0.0);
        pieces.push(Poly::constant(first, self.levels[0]));
        for (i, &j) in self.jumps.iter().enumerate() {
            pieces.push(Poly::constant(j, self.levels[i + 1]));
        }
        PiecewisePoly::from_parts(self.jumps.clone(), pieces)
    }
}
