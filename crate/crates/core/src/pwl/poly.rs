use serde::{Deserialize, Serialize};

/// A polynomial in powers of `(t - origin)`, coefficients in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    pub origin: f64,
    pub coef: Vec<f64>,
}

impl Poly {
    pub fn new(origin: f64, coef: Vec<f64>) -> Self {
        Self { origin, coef }
    }

    pub fn constant(origin: f64, c: f64) -> Self {
        Self {
            origin,
            coef: vec![c],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = t - self.origin;
        self.coef.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    pub fn derivative(&self) -> Poly {
        let coef = if self.coef.len() <= 1 {
            vec![0.0]
        } else {
            self.coef
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| c * k as f64)
                .collect()
        };
        Poly::new(self.origin, coef)
    }

    /// Antiderivative vanishing at `origin`.
    fn integral(&self) -> Poly {
        let mut coef = Vec::with_capacity(self.coef.len() + 1);
        coef.push(0.0);
        coef.extend(self.coef.iter().enumerate().map(|(k, &c)| c / (k + 1) as f64));
        Poly::new(self.origin, coef)
    }

    /// The same polynomial expanded about `new_origin`.
    pub fn shifted(&self, new_origin: f64) -> Poly {
        let d = new_origin - self.origin;
        let n = self.coef.len();
        // Repeated synthetic division (Horner's shift).
        let mut c = self.coef.clone();
        for i in 0..n {
            for j in (i..n - 1).rev() {
                c[j] += d * c[j + 1];
            }
        }
        Poly::new(new_origin, c)
    }

    fn sub(&self, other: &Poly) -> Poly {
        let b = other.shifted(self.origin);
        let n = self.coef.len().max(b.coef.len());
        let coef = (0..n)
            .map(|k| self.coef.get(k).copied().unwrap_or(0.0) - b.coef.get(k).copied().unwrap_or(0.0))
            .collect();
        Poly::new(self.origin, coef)
    }
}

/// A piecewise polynomial on the real line. `pieces[0]` applies left of
/// `breaks[0]`, `pieces[i]` on `[breaks[i-1], breaks[i])` and the last piece
/// from the last break onward. Evaluation is right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    breaks: Vec<f64>,
    pieces: Vec<Poly>,
}

impl PiecewisePoly {
    /// `pieces.len()` must equal `breaks.len() + 1`.
    pub fn from_parts(breaks: Vec<f64>, pieces: Vec<Poly>) -> Self {
        assert_eq!(pieces.len(), breaks.len() + 1, "one piece per gap between breaks");
        debug_assert!(breaks.windows(2).all(|w| w[0] < w[1]));
        Self { breaks, pieces }
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[Poly] {
        &self.pieces
    }

    fn piece_right(&self, t: f64) -> &Poly {
        &self.pieces[self.breaks.partition_point(|&b| b <= t)]
    }

    fn piece_left(&self, t: f64) -> &Poly {
        &self.pieces[self.breaks.partition_point(|&b| b < t)]
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.piece_right(t).eval(t)
    }

    pub fn eval_left(&self, t: f64) -> f64 {
        self.piece_left(t).eval(t)
    }

    pub fn derivative(&self) -> PiecewisePoly {
        PiecewisePoly {
            breaks: self.breaks.clone(),
            pieces: self.pieces.iter().map(Poly::derivative).collect(),
        }
    }

    /// Continuous antiderivative taking value `anchor_v` at `anchor_x`.
    pub fn antiderivative(&self, anchor_x: f64, anchor_v: f64) -> PiecewisePoly {
        let mut pieces: Vec<Poly> = self.pieces.iter().map(Poly::integral).collect();
        for i in 0..self.breaks.len() {
            let b = self.breaks[i];
            let jump = pieces[i].eval(b) - pieces[i + 1].eval(b);
            pieces[i + 1].coef[0] += jump;
        }
        let out = PiecewisePoly {
            breaks: self.breaks.clone(),
            pieces,
        };
        let shift = anchor_v - out.eval(anchor_x);
        let mut out = out;
        for p in &mut out.pieces {
            p.coef[0] += shift;
        }
        out
    }
}

/// Whether [`sup_diff`] maximises `|f - g|` or `f - g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupMode {
    Abs,
    Signed,
}

/// Result of [`sup_diff`]. When `left_limit` is set the supremum is the
/// left limit at `argmax` and need not be attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupDiff {
    pub value: f64,
    pub argmax: f64,
    pub left_limit: bool,
}

/// Exact supremum of `|f - g|` (or `f - g`) over `[lo, hi]`.
///
/// Both one-sided limits are examined at every break of either function,
/// and interior critical points of each polynomial piece are located from
/// the roots of the derivative of the difference.
pub fn sup_diff(f: &PiecewisePoly, g: &PiecewisePoly, lo: f64, hi: f64, mode: SupMode) -> SupDiff {
    assert!(lo <= hi, "empty interval");
    let score = |d: f64| match mode {
        SupMode::Abs => d.abs(),
        SupMode::Signed => d,
    };
    let mut pts: Vec<f64> = f
        .breaks
        .iter()
        .chain(g.breaks.iter())
        .copied()
        .filter(|&b| b > lo && b < hi)
        .collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();

    let d_hi = f.eval(hi) - g.eval(hi);
    let mut best = SupDiff {
        value: score(d_hi),
        argmax: hi,
        left_limit: false,
    };
    let consider = |v: f64, t: f64, left: bool, best: &mut SupDiff| {
        let s = score(v);
        if s > best.value {
            *best = SupDiff {
                value: s,
                argmax: t,
                left_limit: left,
            };
        }
    };

    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = f.piece_right(a).sub(g.piece_right(a)).shifted(a);
        consider(d.eval(a), a, false, &mut best);
        consider(d.eval(b), b, true, &mut best);
        for r in critical_points(&d, a, b) {
            consider(d.eval(r), r, false, &mut best);
        }
    }
    // The right-continuous value at `hi` may be smaller than its left limit;
    // prefer the attained value when they tie.
    if best.left_limit && best.argmax == hi && score(d_hi) >= best.value {
        best.left_limit = false;
    }
    if lo == hi {
        best.value = score(d_hi);
    }
    best
}

/// Points in `(a, b)` where the derivative of `d` vanishes. `d` is expanded
/// about `a`.
fn critical_points(d: &Poly, a: f64, b: f64) -> Vec<f64> {
    let dp = d.derivative();
    let c = &dp.coef;
    let h = b - a;
    let inside = |s: f64| s > 0.0 && s < h;
    let mut out = Vec::new();
    match c.len() {
        0 | 1 => {}
        2 => {
            if c[1] != 0.0 {
                let s = -c[0] / c[1];
                if inside(s) {
                    out.push(a + s);
                }
            }
        }
        3 => {
            for s in quadratic_roots(c[2], c[1], c[0]) {
                if inside(s) {
                    out.push(a + s);
                }
            }
        }
        _ => {
            // Bracket sign changes of the derivative on a fine subdivision
            // and bisect.
            let m = 64;
            let mut prev_s = 0.0;
            let mut prev = dp.eval(a);
            for i in 1..=m {
                let s = h * i as f64 / m as f64;
                let cur = dp.eval(a + s);
                if prev == 0.0 && inside(prev_s) {
                    out.push(a + prev_s);
                } else if prev * cur < 0.0 {
                    let (mut l, mut r) = (prev_s, s);
                    for _ in 0..100 {
                        let mid = 0.5 * (l + r);
                        if dp.eval(a + mid) * prev > 0.0 {
                            l = mid;
                        } else {
                            r = mid;
                        }
                    }
                    out.push(a + 0.5 * (l + r));
                }
                prev_s = s;
                prev = cur;
            }
        }
    }
    out
}

/// Real roots of `a s^2 + b s + c`, computed in the cancellation-free form.
pub(crate) fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b != 0.0 { vec![-c / b] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}
