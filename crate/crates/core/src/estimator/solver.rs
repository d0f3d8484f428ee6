//! Support reduction with continuous knot locations.
//!
//! A candidate fit is a continuous piecewise-linear function on a node set.
//! In density mode the nodes are `0` followed by the knots; the value at the
//! last knot is pinned to zero and the function vanishes beyond it. In
//! regression mode the nodes are `0`, the interior knots and `1`, all with
//! free values.
//!
//! Optimality is expressed through the gap function
//! `D(t) = ∫_0^t (Ĝ - W)`, with `Ĝ` the integral of the fit and `W` the
//! cumulative data mass: the fit is optimal iff `D >= 0` on the search
//! domain and `D = 0` at every knot. Each outer iteration minimises `D`
//! exactly (it is a cubic between consecutive data points and nodes), adds
//! the most negative point of every node segment, and re-solves the
//! least-squares problem on the enlarged support with a backtracking line
//! search that removes knots whose slope change would become negative.
//!
//! Because knots move continuously, `D >= -tol` alone only pins a knot to
//! within the square root of the tolerance. Once no unoccupied gap between
//! data points needs a knot, knot positions are refined by Newton's method
//! on `D'(τ) = 0`.


use super::measure::EmpiricalMeasure;

/// A continuous piecewise-linear candidate with cached integrals at nodes.
#[derive(Debug, Clone)]
pub(crate) struct Shape {
    pub density: bool,
    pub nodes: Vec<f64>,
    pub vals: Vec<f64>,
    big_g: Vec<f64>,
    big_h: Vec<f64>,
}

impl Shape {
    pub fn new(density: bool, nodes: Vec<f64>, vals: Vec<f64>) -> Self {
        debug_assert_eq!(nodes.len(), vals.len());
        let mut big_g = Vec::with_capacity(nodes.len());
        let mut big_h = Vec::with_capacity(nodes.len());
        let (mut g, mut h) = (0.0, 0.0);
        big_g.push(0.0);
        big_h.push(0.0);
        for j in 0..nodes.len() - 1 {
            let w = nodes[j + 1] - nodes[j];
            let (a, b) = (vals[j], vals[j + 1]);
            h += g * w + w * w * (2.0 * a + b) / 6.0;
            g += 0.5 * w * (a + b);
            big_g.push(g);
            big_h.push(h);
        }
        Self {
            density,
            nodes,
            vals,
            big_g,
            big_h,
        }
    }

    fn p(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Segment index for `t`; in density mode `p` denotes the zero tail.
    pub fn seg(&self, t: f64) -> usize {
        let k = self.nodes.partition_point(|&b| b <= t);
        if k == 0 {
            0
        } else if self.density && k == self.nodes.len() {
            self.p()
        } else {
            (k - 1).min(self.p() - 1)
        }
    }

    /// `(origin, value, slope, Ĝ(origin), Ĥ(origin))` of segment `a`.
    pub fn params(&self, a: usize) -> (f64, f64, f64, f64, f64) {
        if a == self.p() {
            (self.nodes[a], 0.0, 0.0, self.big_g[a], self.big_h[a])
        } else {
            let sl = (self.vals[a + 1] - self.vals[a]) / (self.nodes[a + 1] - self.nodes[a]);
            (self.nodes[a], self.vals[a], sl, self.big_g[a], self.big_h[a])
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (o, v, sl, _, _) = self.params(self.seg(t));
        v + sl * (t - o)
    }

    pub fn big_g_at(&self, t: f64) -> f64 {
        let (o, v, sl, g, _) = self.params(self.seg(t));
        let s = t - o;
        g + s * (v + 0.5 * sl * s)
    }

    pub fn big_h_at(&self, t: f64) -> f64 {
        let (o, v, sl, g, h) = self.params(self.seg(t));
        let s = t - o;
        h + s * (g + s * (0.5 * v + sl * s / 6.0))
    }

    pub fn total_mass(&self) -> f64 {
        self.big_g[self.p()]
    }

    /// Knots of the candidate (density: every node after 0; regression:
    /// interior nodes).
    pub fn knots(&self) -> &[f64] {
        if self.density {
            &self.nodes[1..]
        } else {
            &self.nodes[1..self.p()]
        }
    }

    /// Slope change at each knot; the last density knot counts the drop to
    /// the zero tail.
    pub fn betas(&self) -> Vec<f64> {
        let p = self.p();
        let s: Vec<f64> = (0..p)
            .map(|j| (self.vals[j + 1] - self.vals[j]) / (self.nodes[j + 1] - self.nodes[j]))
            .collect();
        let mut out: Vec<f64> = (1..p).map(|j| s[j] - s[j - 1]).collect();
        if self.density {
            out.push(-s[p - 1]);
        }
        out
    }
}

/// Where a knot sits relative to the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Slot {
    /// Strictly between the `(k-1)`-th and `k`-th data point.
    Gap(usize),
    /// Exactly at data point `k`.
    Point(usize),
}

pub(crate) struct Problem<'a> {
    pub meas: &'a EmpiricalMeasure,
    pub density: bool,
    /// Right end of the search domain for `D` in density mode.
    pub tail_end: f64,
}

impl<'a> Problem<'a> {
    pub fn new(meas: &'a EmpiricalMeasure, density: bool, tail_factor: f64) -> Self {
        let tail_end = if density {
            let (lo, hi) = (meas.min_point(), meas.max_point());
            hi + tail_factor * (hi - lo)
        } else {
            1.0
        };
        Self {
            meas,
            density,
            tail_end,
        }
    }

    pub fn nodes(&self, knots: &[f64]) -> Vec<f64> {
        let mut nodes = Vec::with_capacity(knots.len() + 2);
        nodes.push(0.0);
        nodes.extend_from_slice(knots);
        if !self.density {
            nodes.push(1.0);
        }
        nodes
    }

    pub fn search_end(&self, shape: &Shape) -> f64 {
        if self.density {
            self.tail_end.max(shape.nodes[shape.p()])
        } else {
            1.0
        }
    }

    /// `sum_i mass_i hat_j(x_i)` for every node.
    fn load(&self, nodes: &[f64]) -> Vec<f64> {
        let m = self.meas;
        let idx: Vec<usize> = nodes.iter().map(|&t| m.count_lt(t)).collect();
        let range = |a: usize, b: usize| (m.cum_w(b) - m.cum_w(a), m.cum_wx(b) - m.cum_wx(a));
        let p = nodes.len() - 1;
        (0..=p)
            .map(|j| {
                let mut b = 0.0;
                if j > 0 {
                    let (w, wx) = range(idx[j - 1], idx[j]);
                    b += (wx - nodes[j - 1] * w) / (nodes[j] - nodes[j - 1]);
                }
                if j < p {
                    let (w, wx) = range(idx[j], idx[j + 1]);
                    b += (nodes[j + 1] * w - wx) / (nodes[j + 1] - nodes[j]);
                }
                b
            })
            .collect()
    }

    /// Least-squares fit with the given knots and no sign constraints.
    pub fn solve(&self, knots: &[f64]) -> Shape {
        let nodes = self.nodes(knots);
        let p = nodes.len() - 1;
        let b = self.load(&nodes);
        let q = if self.density { p } else { p + 1 };
        let h: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        // Thomas algorithm on the tridiagonal hat-function Gram matrix.
        let diag = |j: usize| {
            let l = if j > 0 { h[j - 1] } else { 0.0 };
            let r = if j < p { h[j] } else { 0.0 };
            (l + r) / 3.0
        };
        let off = |j: usize| h[j] / 6.0;
        let mut c = vec![0.0; q];
        let mut d = vec![0.0; q];
        for j in 0..q {
            let mut den = diag(j);
            let mut rhs = b[j];
            if j > 0 {
                den -= off(j - 1) * c[j - 1];
                rhs -= off(j - 1) * d[j - 1];
            }
            c[j] = if j + 1 < q { off(j) / den } else { 0.0 };
            d[j] = rhs / den;
        }
        let mut v = vec![0.0; p + 1];
        for j in (0..q).rev() {
            v[j] = d[j] - if j + 1 < q { c[j] * v[j + 1] } else { 0.0 };
        }
        Shape::new(self.density, nodes, v)
    }

    /// `½∫g² - sum_i mass_i g(x_i)`.
    pub fn objective(&self, shape: &Shape) -> f64 {
        let b = self.load(&shape.nodes);
        let v = &shape.vals;
        let quad: f64 = shape
            .nodes
            .windows(2)
            .zip(v.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * (y[0] * y[0] + y[0] * y[1] + y[1] * y[1]) / 3.0)
            .sum();
        let lin: f64 = v.iter().zip(&b).map(|(a, c)| a * c).sum();
        0.5 * quad - lin
    }

    pub fn gap(&self, shape: &Shape, t: f64) -> f64 {
        shape.big_h_at(t) - self.meas.integrated(t)
    }

    /// `(D'(t-), D'(t+))`.
    pub fn dgap(&self, shape: &Shape, t: f64) -> (f64, f64) {
        let g = shape.big_g_at(t);
        (g - self.meas.w_left(t), g - self.meas.w(t))
    }

    pub fn slot(&self, t: f64) -> Slot {
        let pts = self.meas.points();
        let k = pts.partition_point(|&x| x < t);
        if k < pts.len() && pts[k] == t {
            Slot::Point(k)
        } else {
            Slot::Gap(k)
        }
    }

    /// Stationarity residual at a knot: `|D'|` inside a gap, distance of
    /// `Ĝ(τ)` to the subgradient interval at a data point.
    pub fn knot_residual(&self, shape: &Shape, t: f64) -> f64 {
        let (l, r) = self.dgap(shape, t);
        match self.slot(t) {
            // Optimality needs D'(t-) <= 0 <= D'(t+); inside a gap both
            // one-sided derivatives coincide.
            Slot::Gap(_) | Slot::Point(_) => l.max(-r).max(0.0),
        }
    }

    /// Exact minimum of `D` over each node segment of the search domain.
    /// Returns `(location, value)` per segment.
    pub fn scan(&self, shape: &Shape) -> Vec<(f64, f64)> {
        let m = self.meas;
        let pts = m.points();
        let end = self.search_end(shape);
        let nseg = if self.density { shape.p() + 1 } else { shape.p() };
        let mut best = vec![(0.0, f64::INFINITY); nseg];
        let mut k = m.count_le(0.0);
        let mut a = 0usize;
        let mut l = 0.0f64;
        while l < end {
            let next_pt = if k < pts.len() { pts[k] } else { f64::INFINITY };
            let next_node = if a + 1 < shape.nodes.len() {
                shape.nodes[a + 1]
            } else {
                f64::INFINITY
            };
            let r = next_pt.min(next_node).min(end);
            let (o, v, sl, g, h) = shape.params(a);
            let (wl, wxl) = (m.cum_w(k), m.cum_wx(k));
            let yl = l * wl - wxl;
            let d_at = |t: f64| {
                let s = t - o;
                (h + s * (g + s * (0.5 * v + sl * s / 6.0))) - (yl + wl * (t - l))
            };
            let slot = &mut best[a.min(nseg - 1)];
            let mut consider = |t: f64| {
                let val = d_at(t);
                if val < slot.1 {
                    *slot = (t, val);
                }
            };
            consider(l);
            consider(r);
            // D'(t) = g + v s + sl s^2 / 2 - wl on this piece.
            for s in crate::pwl::quadratic_roots(0.5 * sl, v, g - wl) {
                let t = o + s;
                if t > l && t < r {
                    consider(t);
                }
            }
            if r == next_pt {
                k += 1;
            }
            if r == next_node {
                a += 1;
            }
            l = r;
        }
        best
    }

    /// Global exact minimum of `D` over the search domain.
    pub fn min_gap(&self, shape: &Shape) -> (f64, f64) {
        self.scan(shape)
            .into_iter()
            .fold((0.0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
    }
}

pub(crate) struct Outcome {
    pub shape: Shape,
    pub iterations: usize,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub reason: String,
}

pub(crate) struct Settings {
    pub tol: f64,
    pub max_iter: usize,
    pub initial_knots: Option<Vec<f64>>,
}

fn all_positive(b: &[f64]) -> bool {
    b.iter().all(|&x| x > 0.0)
}

impl<'a> Problem<'a> {
    fn initial(&self, init: Option<&Vec<f64>>) -> Shape {
        if let Some(k) = init {
            let ok_domain = k.windows(2).all(|w| w[0] < w[1])
                && k.iter().all(|&t| t.is_finite() && t > 0.0 && (self.density || t < 1.0))
                && (!self.density || !k.is_empty());
            if ok_domain {
                let s = self.solve(k);
                if all_positive(&s.betas()) {
                    return s;
                }
            }
        }
        if self.density {
            let (lo, hi) = (self.meas.min_point(), self.meas.max_point());
            self.solve(&[hi + 0.1 * (hi - lo)])
        } else {
            self.solve(&[])
        }
    }

    /// Re-solve on `knots` starting from the feasible candidate `cur`,
    /// backtracking and dropping knots until all slope changes are positive.
    fn reduce(&self, cur: &Shape, mut knots: Vec<f64>) -> Shape {
        let mut old_vals: Vec<f64> = self.nodes(&knots).iter().map(|&t| cur.eval(t)).collect();
        loop {
            let new = self.solve(&knots);
            let bn = new.betas();
            if all_positive(&bn) {
                return new;
            }
            let old = Shape::new(self.density, self.nodes(&knots), old_vals.clone());
            let bo = old.betas();
            let mut lam = 1.0;
            let mut arg = 0;
            for j in 0..bn.len() {
                if bn[j] <= 0.0 {
                    let l = if bo[j] - bn[j] > 0.0 {
                        bo[j] / (bo[j] - bn[j])
                    } else {
                        0.0
                    };
                    if l < lam {
                        lam = l;
                        arg = j;
                    }
                }
            }
            let lam = lam.clamp(0.0, 1.0);
            let mixed: Vec<f64> = old_vals
                .iter()
                .zip(&new.vals)
                .map(|(a, b)| a + lam * (b - a))
                .collect();
            let mix = Shape::new(self.density, self.nodes(&knots), mixed);
            let bm = mix.betas();
            let keep: Vec<bool> = (0..knots.len()).map(|j| j != arg && bm[j] > 0.0).collect();
            let node_keep: Vec<bool> = {
                let mut v = vec![true];
                v.extend(keep.iter().copied());
                if !self.density {
                    v.push(true);
                }
                v
            };
            old_vals = mix
                .vals
                .iter()
                .zip(&node_keep)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .collect();
            knots = knots.iter().zip(&keep).filter(|(_, &k)| k).map(|(t, _)| *t).collect();
            if self.density {
                if knots.is_empty() {
                    // Cannot happen for a feasible start: the mixture keeps a
                    // positive last slope change. Fall back to the start.
                    return cur.clone();
                }
                let last = old_vals.len() - 1;
                old_vals[last] = 0.0;
            }
        }
    }

    fn merge_knots(&self, base: &[f64], cands: &[f64], min_sep: f64) -> Vec<f64> {
        let mut out: Vec<f64> = base.to_vec();
        for &c in cands {
            let i = out.partition_point(|&t| t < c);
            let near = (i > 0 && c - out[i - 1] <= min_sep) || (i < out.len() && out[i] - c <= min_sep);
            if !near && c > min_sep && (self.density || c < 1.0 - min_sep) {
                out.insert(i, c);
            }
        }
        out
    }

    fn residuals(&self, shape: &Shape) -> Vec<f64> {
        shape.knots().iter().map(|&t| self.knot_residual(shape, t)).collect()
    }

    fn max_residual(&self, shape: &Shape) -> f64 {
        self.residuals(shape).into_iter().fold(0.0, f64::max)
    }

    /// F(τ) = Ĝ(τ) - W(τ) inside a gap, with knot `j` moved to `t`; `None`
    /// when the refit is not convex.
    fn moved(&self, ks: &mut [f64], j: usize, t: f64) -> Option<(f64, f64)> {
        ks[j] = t;
        let s = self.solve(ks);
        if !all_positive(&s.betas()) {
            return None;
        }
        Some(self.dgap(&s, t))
    }

    /// Root of the in-gap stationarity function on `(a, b)` given
    /// `fa <= 0 <= fb` (Illinois variant of regula falsi). The knot starts
    /// at `a` when `from_left`, else at `b`; the returned point lies between
    /// the start and the root, so the criterion never increases.
    #[allow(clippy::too_many_arguments)]
    fn knot_root(&self, ks: &mut [f64], j: usize, from_left: bool, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64) -> f64 {
        let mut side = 0;
        let mut best = if from_left { a } else { b };
        for _ in 0..200 {
            let mut c = (a * fb - b * fa) / (fb - fa);
            if !(c > a && c < b) {
                c = 0.5 * (a + b);
            }
            if !(c > a && c < b) {
                break;
            }
            let Some((_, fc)) = self.moved(ks, j, c) else {
                // Convexity is lost inside the bracket: shrink it to the
                // feasible part next to the start.
                let from = if from_left { a } else { b };
                let (e, fe) = self.feasible_edge(ks, j, from, c);
                if e == from {
                    break;
                }
                if from_left {
                    if fe < 0.0 {
                        return e;
                    }
                    b = e;
                    fb = fe;
                } else {
                    if fe > 0.0 {
                        return e;
                    }
                    a = e;
                    fa = fe;
                }
                side = 0;
                continue;
            };
            if (from_left && fc <= 0.0) || (!from_left && fc >= 0.0) {
                best = c;
            }
            if fc.abs() <= 1e-16 {
                return c;
            }
            if fc < 0.0 {
                a = c;
                fa = fc;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = c;
                fb = fc;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        best
    }

    /// Move knot `j` downhill along the profile criterion (the criterion
    /// minimised over values with all knot positions held fixed) until it is
    /// stationary. The derivative of that criterion in `τ_j` is the knot's
    /// slope change times `Ĝ(τ_j) - W(τ_j)`, which rises inside a gap between
    /// data points and drops by the point mass at each data point, so the
    /// walk proceeds gap by gap and ends with a bracketed root search or at a
    /// data point where the one-sided derivatives straddle zero.
    ///
    /// Returns true if the knot set changed.
    fn relax_knot(&self, knots: &mut Vec<f64>, j: usize, ftol: f64) -> bool {
        const MAX_GAPS: usize = 5000;
        let pts = self.meas.points();
        let scale = self.meas.max_point().max(1e-300);
        let lower = if j > 0 { knots[j - 1] } else { 0.0 };
        let upper = if j + 1 < knots.len() {
            knots[j + 1]
        } else if self.density {
            f64::INFINITY
        } else {
            1.0
        };
        let mut ks = knots.clone();
        let t0 = knots[j];
        let Some((l0, r0)) = self.moved(&mut ks, j, t0) else {
            return false;
        };
        if l0 <= ftol && r0 >= -ftol {
            return false;
        }
        let go_right = if r0 < -ftol && l0 > ftol { -r0 > l0 } else { r0 < -ftol };
        let mut pos = t0;
        let mut target = None;
        if go_right {
            let mut fpos = r0;
            for _ in 0..MAX_GAPS {
                let k = pts.partition_point(|&x| x <= pos);
                let b = if k < pts.len() { pts[k] } else { f64::INFINITY };
                if b < upper {
                    let Some((lb, rb)) = self.moved(&mut ks, j, b) else {
                        let (c, fc) = self.feasible_edge(&mut ks, j, pos, b);
                        target = Some(if fc >= 0.0 { self.knot_root(&mut ks, j, true, pos, fpos, c, fc) } else { c });
                        break;
                    };
                    if lb >= 0.0 {
                        target = Some(self.knot_root(&mut ks, j, true, pos, fpos, b, lb));
                        break;
                    }
                    if rb >= 0.0 {
                        target = Some(b);
                        break;
                    }
                    pos = b;
                    fpos = rb;
                } else if upper.is_finite() {
                    let e = upper - 1e-9 * (upper - pos);
                    match self.moved(&mut ks, j, e) {
                        Some((_, fe)) if fe >= 0.0 => {
                            target = Some(self.knot_root(&mut ks, j, true, pos, fpos, e, fe));
                        }
                        _ => {
                            if self.try_remove(knots, j, Some(true)) {
                                return true;
                            }
                            target = self.sample_root(&mut ks, j, true, pos, fpos, e);
                        }
                    }
                    break;
                } else {
                    // Unbounded tail beyond the data: expand until bracketed.
                    let mut step = (pos - self.meas.max_point()).max(1e-3 * scale);
                    for _ in 0..200 {
                        let t = pos + step;
                        let Some((_, ft)) = self.moved(&mut ks, j, t) else {
                            step *= 0.5;
                            if step <= 1e-15 * scale {
                                break;
                            }
                            continue;
                        };
                        if ft >= 0.0 {
                            target = Some(self.knot_root(&mut ks, j, true, pos, fpos, t, ft));
                            break;
                        }
                        pos = t;
                        fpos = ft;
                        step *= 2.0;
                    }
                    if target.is_none() {
                        target = Some(pos);
                    }
                    break;
                }
            }
        } else {
            let mut fpos = l0;
            for _ in 0..MAX_GAPS {
                let k = pts.partition_point(|&x| x < pos);
                let a = if k > 0 { pts[k - 1] } else { f64::NEG_INFINITY };
                if a > lower {
                    let Some((la, ra)) = self.moved(&mut ks, j, a) else {
                        let (c, fc) = self.feasible_edge(&mut ks, j, pos, a);
                        target = Some(if fc <= 0.0 { self.knot_root(&mut ks, j, false, c, fc, pos, fpos) } else { c });
                        break;
                    };
                    if ra <= 0.0 {
                        target = Some(self.knot_root(&mut ks, j, false, a, ra, pos, fpos));
                        break;
                    }
                    if la <= 0.0 {
                        target = Some(a);
                        break;
                    }
                    pos = a;
                    fpos = la;
                } else {
                    let e = lower + 1e-9 * (pos - lower);
                    match self.moved(&mut ks, j, e) {
                        Some((_, fe)) if fe <= 0.0 => {
                            target = Some(self.knot_root(&mut ks, j, false, e, fe, pos, fpos));
                        }
                        _ => {
                            if self.try_remove(knots, j, Some(false)) {
                                return true;
                            }
                            target = self.sample_root(&mut ks, j, false, pos, fpos, e);
                        }
                    }
                    break;
                }
            }
        }
        match target {
            Some(t) if t != t0 => {
                knots[j] = t;
                true
            }
            _ => false,
        }
    }

    /// Scan from `pos` towards `end` within one gap for a sign change of
    /// the stationarity function, which need not be monotone there.
    #[allow(clippy::too_many_arguments)]
    fn sample_root(&self, ks: &mut [f64], j: usize, right: bool, pos: f64, fpos: f64, end: f64) -> Option<f64> {
        const SAMPLES: usize = 32;
        let (mut prev, mut fprev) = (pos, fpos);
        for i in 1..=SAMPLES {
            let t = pos + (end - pos) * i as f64 / SAMPLES as f64;
            let (_, ft) = self.moved(ks, j, t)?;
            if right && ft >= 0.0 {
                return Some(self.knot_root(ks, j, true, prev, fprev, t, ft));
            }
            if !right && ft <= 0.0 {
                return Some(self.knot_root(ks, j, false, t, ft, prev, fprev));
            }
            prev = t;
            fprev = ft;
        }
        None
    }

    /// Last point on the way from the feasible `from` to the infeasible `to`
    /// at which knot `j` still gives a convex fit, with the in-gap
    /// stationarity value there.
    fn feasible_edge(&self, ks: &mut [f64], j: usize, from: f64, to: f64) -> (f64, f64) {
        let (mut ok, mut bad) = (from, to);
        let mut f_ok = self.moved(ks, j, from).map_or(0.0, |v| if to > from { v.1 } else { v.0 });
        for _ in 0..100 {
            let mid = 0.5 * (ok + bad);
            if mid == ok || mid == bad {
                break;
            }
            match self.moved(ks, j, mid) {
                Some((_, f)) => {
                    ok = mid;
                    f_ok = f;
                }
                None => bad = mid,
            }
        }
        (ok, f_ok)
    }

    /// Remove knots whose slope change has dropped to rounding level.
    fn drop_vanishing(&self, knots: &mut Vec<f64>) -> bool {
        let mut changed = false;
        loop {
            let s = self.solve(knots);
            let b = s.betas();
            let top = b.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let Some(j) = (0..b.len()).filter(|&j| b[j] <= 1e-12 * top).min_by(|&x, &y| b[x].total_cmp(&b[y])) else {
                return changed;
            };
            if !self.try_remove(knots, j, None) {
                return changed;
            }
            changed = true;
        }
    }

    /// Drop knot `j` when it is pushed onto a neighbour (`toward_right`
    /// selects which) or the domain edge. A neighbouring knot absorbs its
    /// slope change and is relaxed afterwards. Accepted when the refit stays
    /// convex and the criterion does not increase.
    fn try_remove(&self, knots: &mut Vec<f64>, j: usize, toward_right: Option<bool>) -> bool {
        if self.density && knots.len() == 1 {
            return false;
        }
        let cur = self.solve(knots);
        let before = self.objective(&cur);
        let mut ks = knots.clone();
        ks.remove(j);
        let nb = match toward_right {
            Some(true) if j < ks.len() => Some(j),
            Some(false) if j > 0 => Some(j - 1),
            _ => None,
        };
        if let Some(k) = nb {
            let b = cur.betas();
            let other = if k == j { j + 1 } else { j - 1 };
            let avg = (knots[j] * b[j] + knots[other] * b[other]) / (b[j] + b[other]);
            let keep = ks[k];
            ks[k] = avg;
            if !all_positive(&self.solve(&ks).betas()) {
                ks[k] = keep;
            }
            self.relax_knot(&mut ks, k, 0.0);
        }
        let s = self.solve(&ks);
        if all_positive(&s.betas()) && self.objective(&s) <= before + 1e-14 * (1.0 + before.abs()) {
            *knots = ks;
            true
        } else {
            false
        }
    }

    /// Merge knots sharing a gap between data points, then relax knots one
    /// at a time until every knot is stationary. Returns `None` if the merged
    /// knot set is not feasible.
    fn polish(&self, cur: &Shape, ftol: f64) -> Option<Shape> {
        let knots = cur.knots().to_vec();
        let betas = cur.betas();
        let mut merged: Vec<f64> = Vec::with_capacity(knots.len());
        let mut i = 0;
        while i < knots.len() {
            let s = self.slot(knots[i]);
            let mut j = i + 1;
            if matches!(s, Slot::Gap(_)) {
                while j < knots.len() && self.slot(knots[j]) == s {
                    j += 1;
                }
            }
            let wsum: f64 = betas[i..j].iter().sum();
            let t = if j - i == 1 || wsum <= 0.0 {
                knots[i]
            } else {
                knots[i..j].iter().zip(&betas[i..j]).map(|(t, b)| t * b).sum::<f64>() / wsum
            };
            merged.push(t);
            i = j;
        }
        let mut knots = merged;
        if !all_positive(&self.solve(&knots).betas()) {
            return None;
        }
        for _ in 0..500 {
            let mut changed = false;
            let mut j = 0;
            while j < knots.len() {
                let len = knots.len();
                changed |= self.relax_knot(&mut knots, j, ftol);
                if knots.len() == len {
                    j += 1;
                }
            }
            changed |= self.drop_vanishing(&mut knots);
            let shape = self.solve(&knots);
            if !changed || self.max_residual(&shape) <= ftol {
                return Some(shape);
            }
        }
        Some(self.solve(&knots))
    }

    pub fn run(&self, settings: &Settings) -> Outcome {
        let tol = settings.tol;
        let mut shape = self.initial(settings.initial_knots.as_ref());
        let mut obj = self.objective(&shape);
        let mut trace = vec![obj];
        let scale = self.meas.max_point().max(1.0);
        let min_sep = 1e-12 * scale;
        let mut iterations = 0;
        let mut force_classic = false;
        loop {
            if iterations >= settings.max_iter {
                return Outcome {
                    shape,
                    iterations,
                    trace,
                    converged: false,
                    reason: "iteration cap reached".into(),
                };
            }
            iterations += 1;
            let mins = self.scan(&shape);
            let mut cands: Vec<f64> = mins
                .iter()
                .filter(|(_, v)| *v < -0.5 * tol)
                .map(|(t, _)| *t)
                .collect();
            cands.sort_by(f64::total_cmp);
            cands.dedup();
            let occupied: Vec<Slot> = shape.knots().iter().map(|&t| self.slot(t)).collect();
            let fresh: Vec<f64> = cands
                .iter()
                .copied()
                .filter(|&t| !occupied.contains(&self.slot(t)))
                .collect();
            let residual = self.max_residual(&shape);

            let to_add = if !fresh.is_empty() && !force_classic {
                fresh
            } else if force_classic && !cands.is_empty() {
                let (t, _) = mins
                    .iter()
                    .copied()
                    .fold((0.0, f64::INFINITY), |a, x| if x.1 < a.1 { x } else { a });
                vec![t]
            } else if !cands.is_empty() || residual > 0.1 * tol {
                if !force_classic {
                    if let Some(p) = self.polish(&shape, 1e-3 * tol) {
                        let po = self.objective(&p);
                        let improved = self.max_residual(&p) < residual || self.min_gap(&p).1 > self.min_gap(&shape).1;
                        if po <= obj + 1e-14 * (1.0 + obj.abs()) && improved {
                            shape = p;
                            obj = po;
                            trace.push(obj);
                            continue;
                        }
                    }
                }
                force_classic = false;
                if cands.is_empty() {
                    return Outcome {
                        shape,
                        iterations,
                        trace,
                        converged: false,
                        reason: format!("knot stationarity residual {residual:e} could not be reduced"),
                    };
                }
                // Fall back to the plain support-reduction step with the
                // single most violated point.
                let (t, _) = mins
                    .iter()
                    .copied()
                    .fold((0.0, f64::INFINITY), |a, x| if x.1 < a.1 { x } else { a });
                vec![t]
            } else {
                return Outcome {
                    shape,
                    iterations,
                    trace,
                    converged: true,
                    reason: String::new(),
                };
            };

            let knots = self.merge_knots(shape.knots(), &to_add, min_sep);
            if knots.len() == shape.knots().len() {
                // Every candidate coincided with an existing knot.
                if force_classic {
                    return Outcome {
                        shape,
                        iterations,
                        trace,
                        converged: false,
                        reason: "no admissible candidate knot".into(),
                    };
                }
                force_classic = true;
                continue;
            }
            let next = self.reduce(&shape, knots);
            let no = self.objective(&next);
            if no > obj + 1e-14 * (1.0 + obj.abs()) || next.knots() == shape.knots() {
                // No progress with the batch; retry with the classic step.
                if force_classic {
                    return Outcome {
                        shape,
                        iterations,
                        trace,
                        converged: false,
                        reason: "support reduction stalled".into(),
                    };
                }
                force_classic = true;
                continue;
            }
            force_classic = false;
            shape = next;
            obj = no.min(obj);
            trace.push(no);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meas() -> EmpiricalMeasure {
        EmpiricalMeasure::density(vec![0.05, 0.1, 0.2, 0.35, 0.5, 0.8]).unwrap()
    }

    #[test]
    fn shape_integrals_are_exact() {
        // g = 2 - 2t on [0, 1], zero beyond.
        let s = Shape::new(true, vec![0.0, 1.0], vec![2.0, 0.0]);
        assert!((s.big_g_at(0.5) - 0.75).abs() < 1e-15);
        assert!((s.big_h_at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.big_h_at(3.0) - (2.0 / 3.0 + 2.0)).abs() < 1e-15);
        assert_eq!(s.betas(), vec![2.0]);
    }

    #[test]
    fn fixed_support_solution_zeroes_gap_at_knots() {
        let m = meas();
        let pb = Problem::new(&m, true, 1.5);
        let s = pb.solve(&[0.3, 0.9]);
        for &t in s.knots() {
            assert!(pb.gap(&s, t).abs() < 1e-14);
        }
    }

    #[test]
    fn regression_fixed_support_matches_free_affine_directions() {
        let m = EmpiricalMeasure::regression_fixed_design(vec![1.0, -0.5, 0.3, 2.0, 0.1]).unwrap();
        let pb = Problem::new(&m, false, 1.5);
        let s = pb.solve(&[0.4]);
        assert!(pb.gap(&s, 0.4).abs() < 1e-14);
        assert!(pb.gap(&s, 1.0).abs() < 1e-14);
        assert!((s.big_g_at(1.0) - m.w(1.0)).abs() < 1e-14);
    }

    #[test]
    fn scan_finds_exact_minimum() {
        let m = meas();
        let pb = Problem::new(&m, true, 1.5);
        let s = pb.solve(&[0.9]);
        let (t, v) = pb.min_gap(&s);
        let end = pb.search_end(&s);
        let mut grid_min = f64::INFINITY;
        for i in 0..=200_000 {
            let x = end * i as f64 / 200_000.0;
            grid_min = grid_min.min(pb.gap(&s, x));
        }
        assert!(v <= grid_min + 1e-15);
        assert!((pb.gap(&s, t) - v).abs() < 1e-14);
        assert!(grid_min - v < 1e-8);
    }
}
