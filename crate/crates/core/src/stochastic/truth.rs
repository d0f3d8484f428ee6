use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::pwl::{Extension, PiecewiseLinear, PiecewisePoly, Poly};

/// One piece of a truth function on `[lo, hi]`:
/// `a0 + a1 (t - lo) + c |t - x0|^alpha`.
///
/// When `c != 0`, `x0` must not lie strictly inside `(lo, hi)` so that the
/// power term has a fixed sign of `t - x0` on the piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub a0: f64,
    pub a1: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "one")]
    pub alpha: f64,
}

fn one() -> f64 {
    1.0
}

impl Piece {
    pub fn linear(lo: f64, hi: f64, a0: f64, a1: f64) -> Self {
        Self {
            lo,
            hi,
            a0,
            a1,
            c: 0.0,
            x0: lo,
            alpha: 1.0,
        }
    }

    fn right_of_x0(&self) -> bool {
        self.lo >= self.x0
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut v = self.a0 + self.a1 * (t - self.lo);
        if self.c != 0.0 {
            v += self.c * (t - self.x0).abs().powf(self.alpha);
        }
        v
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let mut d = self.a1;
        if self.c != 0.0 {
            let s = if self.right_of_x0() { 1.0 } else { -1.0 };
            d += s * self.c * self.alpha * (t - self.x0).abs().powf(self.alpha - 1.0);
        }
        d
    }

    /// `∫_lo^t` of the piece.
    pub fn integral_from_lo(&self, t: f64) -> f64 {
        let s = t - self.lo;
        let mut v = self.a0 * s + 0.5 * self.a1 * s * s;
        if self.c != 0.0 {
            let p = self.alpha + 1.0;
            let term = if self.right_of_x0() {
                (t - self.x0).powf(p) - (self.lo - self.x0).powf(p)
            } else {
                (self.x0 - self.lo).powf(p) - (self.x0 - t).powf(p)
            };
            v += self.c * term / p;
        }
        v
    }

    /// `∫_lo^t s · piece(s) ds`, used for moments.
    fn first_moment_from_lo(&self, t: f64) -> f64 {
        // Composite Gauss-Legendre is exact for the polynomial part and
        // highly accurate for the smooth power term.
        const NODES: [f64; 5] = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        let panels = if self.c == 0.0 { 1 } else { 256 };
        let h = (t - self.lo) / panels as f64;
        let mut acc = 0.0;
        for k in 0..panels {
            let mid = self.lo + (k as f64 + 0.5) * h;
            for (z, w) in NODES.iter().zip(W) {
                let s = mid + 0.5 * h * z;
                acc += w * 0.5 * h * s * self.eval(s);
            }
        }
        acc
    }

    /// The piece as a polynomial in `t - lo`, if the power is an integer.
    fn to_poly(&self) -> Option<Poly> {
        let mut coef = vec![self.a0, self.a1];
        if self.c != 0.0 {
            if self.alpha.fract() != 0.0 || self.alpha < 0.0 || self.alpha > 16.0 {
                return None;
            }
            let k = self.alpha as usize;
            // ±(t - x0) = ±((t - lo) + (lo - x0))
            let sign = if self.right_of_x0() { 1.0 } else { -1.0 };
            let d = sign * (self.lo - self.x0);
            let mut binom = 1.0;
            coef.resize(coef.len().max(k + 1), 0.0);
            for j in 0..=k {
                // c * sum_j C(k,j) (sign s)^j d^(k-j)
                coef[j] += self.c * binom * sign.powi(j as i32) * d.powi((k - j) as i32);
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
        }
        Some(Poly::new(self.lo, coef))
    }
}

/// What a [`TruthSpec`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthKind {
    Triangular,
    PwlDensity,
    BoundaryCase,
    RegressionFn,
}

/// The three local shapes around a boundary point of a linear region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryShape {
    /// Kink: slope jumps by `k2` at `x0`.
    A,
    /// Smooth power departure to the right of `x0`.
    B,
    /// Smooth power departure to the left of `x0`.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryParams {
    pub shape: BoundaryShape,
    pub x0: f64,
    pub k1: f64,
    pub k2: f64,
    pub alpha: f64,
}

/// A true density on a bounded support, or a regression function on `[0, 1]`,
/// stored as contiguous closed-form pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub kind: TruthKind,
    pub pieces: Vec<Piece>,
    /// A declared interval on which the function is linear.
    #[serde(default)]
    pub linear_region: Option<[f64; 2]>,
    #[serde(default)]
    pub boundary: Option<BoundaryParams>,
}

impl TruthSpec {
    fn build(
        kind: TruthKind,
        pieces: Vec<Piece>,
        linear_region: Option<[f64; 2]>,
        boundary: Option<BoundaryParams>,
    ) -> Result<Self> {
        let t = Self {
            kind,
            pieces,
            linear_region,
            boundary,
        };
        t.validate()?;
        Ok(t)
    }

    /// Check structural and (for densities) normalization invariants.
    pub fn validate(&self) -> Result<()> {
        if self.pieces.is_empty() {
            return input("truth needs at least one piece");
        }
        for (i, p) in self.pieces.iter().enumerate() {
            let finite = [p.lo, p.hi, p.a0, p.a1, p.c, p.x0, p.alpha].iter().all(|v| v.is_finite());
            if !finite || p.hi <= p.lo {
                return input(format!("piece {i} is malformed"));
            }
            if p.c != 0.0 && p.x0 > p.lo && p.x0 < p.hi {
                return input(format!("piece {i}: power centre must not lie inside the piece"));
            }
            if i > 0 && (p.lo - self.pieces[i - 1].hi).abs() > 1e-12 {
                return input("pieces must be contiguous");
            }
        }
        if let Some([a, b]) = self.linear_region {
            if !(a < b) || a < self.start() - 1e-12 || b > self.end() + 1e-12 {
                return input("linear region must be a nonempty subinterval of the domain");
            }
        }
        if let Some(bp) = self.boundary {
            let ok = match bp.shape {
                BoundaryShape::A => bp.k1 + bp.k2 < 0.0 && bp.k2 > 0.0,
                BoundaryShape::B | BoundaryShape::C => bp.k1 < 0.0 && bp.k2 > 0.0 && bp.alpha > 1.0,
            };
            if !ok {
                return input("boundary-case parameters violate the sign constraints");
            }
        }
        if self.is_density() {
            if self.start() < 0.0 {
                return input("density support must lie in [0, inf)");
            }
            let mass = self.integral(self.end());
            if (mass - 1.0).abs() > 1e-10 {
                return input(format!("density integrates to {mass}, not 1"));
            }
            for p in &self.pieces {
                for k in 0..=64 {
                    let t = p.lo + (p.hi - p.lo) * k as f64 / 64.0;
                    if p.eval(t) < -1e-12 {
                        return input(format!("density is negative at {t}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_density(&self) -> bool {
        self.kind != TruthKind::RegressionFn
    }

    /// Left end of the support (density) or domain (regression).
    pub fn start(&self) -> f64 {
        self.pieces[0].lo
    }

    pub fn end(&self) -> f64 {
        self.pieces[self.pieces.len() - 1].hi
    }

    /// Triangular density `2(1 - t)` on `[0, 1]`.
    pub fn triangular() -> Self {
        Self::build(
            TruthKind::Triangular,
            vec![Piece::linear(0.0, 1.0, 2.0, -2.0)],
            Some([0.0, 1.0]),
            None,
        )
        .expect("triangular density is valid")
    }

    /// Uniform density on `[0, 1]`.
    pub fn uniform() -> Self {
        Self::build(
            TruthKind::PwlDensity,
            vec![Piece::linear(0.0, 1.0, 1.0, 0.0)],
            Some([0.0, 1.0]),
            None,
        )
        .expect("uniform density is valid")
    }

    /// Density given by a piecewise-linear function on its breakpoint span.
    pub fn pwl_density(f: &PiecewiseLinear) -> Result<Self> {
        let x = f.breakpoints();
        let v = f.values();
        let pieces = (0..x.len() - 1)
            .map(|i| Piece::linear(x[i], x[i + 1], v[i], (v[i + 1] - v[i]) / (x[i + 1] - x[i])))
            .collect();
        Self::build(TruthKind::PwlDensity, pieces, None, None)
    }

    /// Convex decreasing density on `[0, 1]` that is linear on one side of
    /// `x0` and departs from that line on the other side:
    ///
    /// * `A`: `f(x0) + k1 (t - x0) + k2 (t - x0)_+`
    /// * `B`: `f(x0) + k1 (t - x0) + k2 (t - x0)_+^alpha`
    /// * `C`: `f(x0) + k1 (t - x0) + k2 (x0 - t)_+^alpha`
    ///
    /// `f(x0)` is set so that the density has unit mass.
    pub fn boundary_case(shape: BoundaryShape, x0: f64, k1: f64, k2: f64, alpha: f64) -> Result<Self> {
        if !(x0 > 0.0 && x0 < 1.0) {
            return input("x0 must lie in (0, 1)");
        }
        let alpha = if shape == BoundaryShape::A { 1.0 } else { alpha };
        // Mass of the density minus its value at x0.
        let rest = match shape {
            BoundaryShape::A | BoundaryShape::B => {
                k1 * (0.5 - x0) + k2 * (1.0 - x0).powf(alpha + 1.0) / (alpha + 1.0)
            }
            BoundaryShape::C => k1 * (0.5 - x0) + k2 * x0.powf(alpha + 1.0) / (alpha + 1.0),
        };
        let fx0 = 1.0 - rest;
        let left = Piece::linear(0.0, x0, fx0 - k1 * x0, k1);
        let right = Piece::linear(x0, 1.0, fx0, k1);
        let (pieces, region) = match shape {
            BoundaryShape::A | BoundaryShape::B => {
                let right = Piece {
                    c: k2,
                    x0,
                    alpha,
                    ..right
                };
                (vec![left, right], [0.0, x0])
            }
            BoundaryShape::C => {
                let left = Piece {
                    c: k2,
                    x0,
                    alpha,
                    ..left
                };
                (vec![left, right], [x0, 1.0])
            }
        };
        let t = Self::build(
            TruthKind::BoundaryCase,
            pieces,
            Some(region),
            Some(BoundaryParams {
                shape,
                x0,
                k1,
                k2,
                alpha,
            }),
        )?;
        let f1 = t.eval_left(1.0);
        let slope_end = t.pieces[t.pieces.len() - 1].derivative(1.0);
        if f1 < -1e-12 || slope_end > 1e-12 {
            return input("boundary-case density must stay nonnegative and nonincreasing on [0, 1]");
        }
        Ok(t)
    }

    /// Default kink case: `x0 = 0.4`, density vanishing at 1.
    pub fn case_a() -> Self {
        Self::boundary_case(BoundaryShape::A, 0.4, -50.0 / 11.0, 100.0 / 33.0, 1.0)
            .expect("default case A is valid")
    }

    /// Default right power case with `x0 = 0.4`: the density and its slope
    /// both vanish at 1, so it is proportional to `(1 - t)^2` on `[0.4, 1]`
    /// when `alpha = 2`.
    pub fn case_b(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0) {
            return input("alpha must exceed 1");
        }
        let w: f64 = 0.6;
        let b = alpha * w.powf(alpha - 1.0);
        let a = (alpha - 1.0) * w.powf(alpha);
        let z = a - 0.1 * b + w.powf(alpha + 1.0) / (alpha + 1.0);
        Self::boundary_case(BoundaryShape::B, 0.4, -b / z, 1.0 / z, alpha)
    }

    /// Default left power case: linear `∝ 1 - t` on `[0.5, 1]`.
    pub fn case_c(alpha: f64) -> Result<Self> {
        let z = 0.5 + 0.5f64.powf(alpha + 1.0) / (alpha + 1.0);
        Self::boundary_case(BoundaryShape::C, 0.5, -1.0 / z, 1.0 / z, alpha)
    }

    /// Regression function on `[0, 1]` from pieces.
    pub fn regression(pieces: Vec<Piece>, linear_region: Option<[f64; 2]>) -> Result<Self> {
        let t = Self::build(TruthKind::RegressionFn, pieces, linear_region, None)?;
        if t.start() != 0.0 || t.end() != 1.0 {
            return input("regression truth must be defined on [0, 1]");
        }
        Ok(t)
    }

    /// `r(t) = a + b t` on `[0, 1]`.
    pub fn regression_linear(a: f64, b: f64) -> Self {
        Self::regression(vec![Piece::linear(0.0, 1.0, a, b)], Some([0.0, 1.0])).expect("valid")
    }

    /// `r(t) = t^2` on `[0, 1]`.
    pub fn regression_square() -> Self {
        Self::regression(
            vec![Piece {
                c: 1.0,
                x0: 0.0,
                alpha: 2.0,
                ..Piece::linear(0.0, 1.0, 0.0, 0.0)
            }],
            None,
        )
        .expect("valid")
    }

    /// Convex function that is linear (slope `slope`) on `[a, b]` with
    /// quadratic flanks `(a - t)^2` and `(t - b)^2` outside.
    pub fn regression_linear_middle(a: f64, b: f64, slope: f64) -> Result<Self> {
        if !(0.0 < a && a < b && b < 1.0) {
            return input("linear region must lie inside (0, 1)");
        }
        let left = Piece {
            c: 1.0,
            x0: a,
            alpha: 2.0,
            ..Piece::linear(0.0, a, -slope * a, slope)
        };
        let mid = Piece::linear(a, b, 0.0, slope);
        let right = Piece {
            c: 1.0,
            x0: b,
            alpha: 2.0,
            ..Piece::linear(b, 1.0, slope * (b - a), slope)
        };
        Self::regression(vec![left, mid, right], Some([a, b]))
    }

    fn piece_index(&self, t: f64) -> usize {
        let k = self.pieces.partition_point(|p| p.hi <= t);
        k.min(self.pieces.len() - 1)
    }

    /// Value at `t` (right-continuous at piece boundaries). Densities vanish
    /// outside their support; regression functions extend their edge pieces.
    pub fn eval(&self, t: f64) -> f64 {
        if self.is_density() && (t < self.start() || t >= self.end()) {
            return 0.0;
        }
        self.pieces[self.piece_index(t)].eval(t)
    }

    /// Left limit at `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        if self.is_density() && (t <= self.start() || t > self.end()) {
            return 0.0;
        }
        let k = self.pieces.partition_point(|p| p.hi < t).min(self.pieces.len() - 1);
        self.pieces[k].eval(t)
    }

    /// Right derivative at `t`.
    pub fn derivative(&self, t: f64) -> f64 {
        if self.is_density() && (t < self.start() || t >= self.end()) {
            return 0.0;
        }
        self.pieces[self.piece_index(t)].derivative(t)
    }

    /// `∫_start^t`: the distribution function for densities, `R0(t)` for
    /// regression functions.
    pub fn integral(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for p in &self.pieces {
            if t <= p.lo {
                break;
            }
            acc += p.integral_from_lo(t.min(p.hi));
        }
        acc
    }

    /// Distribution function of a density truth.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= self.start() {
            0.0
        } else if t >= self.end() {
            1.0
        } else {
            self.integral(t)
        }
    }

    /// `∫ t f(t) dt` for a density truth.
    pub fn mean(&self) -> f64 {
        self.pieces.iter().map(|p| p.first_moment_from_lo(p.hi)).sum()
    }

    /// Inverse distribution function on `[0, 1]`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !self.is_density() {
            return Err(Error::Mode("quantile of a regression function".into()));
        }
        if !(0.0..=1.0).contains(&u) {
            return input(format!("probability {u} outside [0, 1]"));
        }
        let mut below = 0.0;
        for (i, p) in self.pieces.iter().enumerate() {
            let mass = p.integral_from_lo(p.hi);
            if below + mass >= u || i + 1 == self.pieces.len() {
                let r = (u - below).max(0.0);
                return Ok(invert_piece(p, r.min(mass)));
            }
            below += mass;
        }
        unreachable!()
    }

    /// The truth as a piecewise-linear function, when it has no power terms.
    pub fn to_pwl(&self) -> Option<PiecewiseLinear> {
        if self.pieces.iter().any(|p| p.c != 0.0) {
            return None;
        }
        let mut x: Vec<f64> = self.pieces.iter().map(|p| p.lo).collect();
        let mut v: Vec<f64> = self.pieces.iter().map(|p| p.a0).collect();
        let last = self.pieces[self.pieces.len() - 1];
        x.push(last.hi);
        v.push(last.eval(last.hi));
        let ext = if self.is_density() && v[v.len() - 1] == 0.0 {
            Extension::ClampZeroRight
        } else {
            Extension::Extend
        };
        PiecewiseLinear::new_dedup(x, v, ext).ok()
    }

    /// Exact piecewise-polynomial form of the function (zero outside the
    /// support for densities), when all powers are integers.
    pub fn to_poly(&self) -> Option<PiecewisePoly> {
        let mut polys = Vec::with_capacity(self.pieces.len() + 2);
        for p in &self.pieces {
            polys.push(p.to_poly()?);
        }
        let mut breaks: Vec<f64> = self.pieces.iter().map(|p| p.lo).collect();
        let mut pieces = Vec::with_capacity(polys.len() + 2);
        if self.is_density() {
            breaks.push(self.end());
            pieces.push(Poly::constant(self.start(), 0.0));
            pieces.extend(polys);
            pieces.push(Poly::constant(self.end(), 0.0));
        } else {
            pieces.push(polys[0].clone());
            pieces.extend(polys);
        }
        Some(PiecewisePoly::from_parts(breaks, pieces))
    }

    /// Exact `∫_start^t` as a piecewise polynomial (the distribution
    /// function for densities).
    pub fn integral_poly(&self) -> Option<PiecewisePoly> {
        Some(self.to_poly()?.antiderivative(self.start(), 0.0))
    }
}

/// Solve `∫_lo^{lo+s} piece = r` for `s`.
fn invert_piece(p: &Piece, r: f64) -> f64 {
    let w = p.hi - p.lo;
    if r <= 0.0 {
        return p.lo;
    }
    if p.c == 0.0 {
        // a0 s + a1 s^2 / 2 = r, root continuous in a1 -> 0.
        let disc = (p.a0 * p.a0 + 2.0 * p.a1 * r).max(0.0);
        let s = 2.0 * r / (p.a0 + disc.sqrt());
        return p.lo + s.clamp(0.0, w);
    }
    // Safeguarded Newton on the increasing function ∫_lo^t p - r.
    let (mut a, mut b) = (p.lo, p.hi);
    let mut t = p.lo + 0.5 * w;
    for _ in 0..200 {
        let g = p.integral_from_lo(t) - r;
        if g > 0.0 {
            b = t;
        } else {
            a = t;
        }
        let d = p.eval(t);
        let mut next = if d > 0.0 { t - g / d } else { f64::NAN };
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if (next - t).abs() <= 1e-15 * (1.0 + t.abs()) || b - a <= 1e-15 * (1.0 + t.abs()) {
            return next;
        }
        t = next;
    }
    t
}
