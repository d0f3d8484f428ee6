use serde::{Deserialize, Serialize};

use super::measure::{EmpiricalMeasure, Mode};
use super::solver::{Problem, Shape};
use super::ConvexFit;
use crate::error::{input, Error, Result};
use crate::pwl::{sup_diff, PiecewisePoly, SupMode};
use crate::stochastic::TruthSpec;

/// Optimality diagnostics of a convex least squares fit, computed exactly
/// from the piecewise-polynomial integrals.
///
/// With `Ĝ` the integral of the fit and `W` the cumulative data mass, the
/// gap is `D(t) = ∫_0^t (Ĝ - W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    /// `min D` over the search domain; nonnegative at the optimum.
    pub min_gap: f64,
    /// Where `min_gap` is attained.
    pub min_gap_at: f64,
    /// `max |D(τ)|` over knots (and `|D(1)|` in regression mode).
    pub knot_equality_error: f64,
    /// `|sum_τ Δ(τ) D(τ)|` with `Δ(τ)` the slope change at knot `τ`.
    pub fubini_residual: f64,
    /// Largest mismatch between `Ĝ` and `W` at the knots. Inside a gap
    /// between data points this is `|Ĝ(τ) - W(τ)|`; at a data point it is the
    /// distance of `Ĝ(τ)` to the interval between `W(τ-)` and `W(τ)`. In
    /// regression mode `|Ĝ(1) - W(1)|` is included.
    pub df_match_error: f64,
    /// `|∫ fit - 1|` in density mode.
    pub mass_error: Option<f64>,
    /// `sup|Ĝ - G0| / sup|W - G0|` when a truth with polynomial pieces is
    /// supplied, `G0` being the truth's integral.
    pub marshall_ratio: Option<f64>,
    /// The numerator and denominator of `marshall_ratio`.
    #[serde(default)]
    pub marshall_distances: Option<[f64; 2]>,
}

pub(crate) fn compute(
    shape: &Shape,
    pb: &Problem<'_>,
    truth: Option<&TruthSpec>,
) -> Result<CharacterizationReport> {
    let knots = shape.knots();
    let betas = shape.betas();
    let (min_gap_at, min_gap) = pb.min_gap(shape);
    let mut knot_eq = knots.iter().map(|&t| pb.gap(shape, t).abs()).fold(0.0, f64::max);
    let fubini = knots
        .iter()
        .zip(&betas)
        .map(|(&t, b)| b * pb.gap(shape, t))
        .sum::<f64>()
        .abs();
    let mut df = knots.iter().map(|&t| pb.knot_residual(shape, t)).fold(0.0, f64::max);
    let mass_error = if pb.density {
        Some((shape.total_mass() - 1.0).abs())
    } else {
        knot_eq = knot_eq.max(pb.gap(shape, 1.0).abs());
        df = df.max((shape.big_g_at(1.0) - pb.meas.w(1.0)).abs());
        None
    };
    let marshall_distances = match truth {
        Some(t) => marshall(shape, pb.meas, t)?,
        None => None,
    };
    let marshall_ratio = marshall_distances.map(|[num, den]| num / den);
    Ok(CharacterizationReport {
        min_gap,
        min_gap_at,
        knot_equality_error: knot_eq,
        fubini_residual: fubini,
        df_match_error: df,
        mass_error,
        marshall_ratio,
        marshall_distances,
    })
}

fn marshall(shape: &Shape, meas: &EmpiricalMeasure, truth: &TruthSpec) -> Result<Option<[f64; 2]>> {
    let density = meas.mode() == Mode::Density;
    if truth.is_density() != density {
        return Err(Error::Mode("truth kind does not match the fit mode".into()));
    }
    let Some(g0) = truth.integral_poly() else {
        return Ok(None);
    };
    let fit = super::shape_to_pwl(shape).antiderivative(0.0, 0.0);
    let emp: PiecewisePoly = meas.cumulative().to_poly();
    let hi = if density {
        shape.nodes[shape.nodes.len() - 1]
            .max(meas.max_point())
            .max(truth.end())
    } else {
        1.0
    };
    let num = sup_diff(&fit, &g0, 0.0, hi, SupMode::Abs).value;
    let den = sup_diff(&emp, &g0, 0.0, hi, SupMode::Abs).value;
    if den == 0.0 {
        return input("empirical and true integrals coincide; ratio undefined");
    }
    Ok(Some([num, den]))
}

impl ConvexFit {
    /// True when every residual is within `tol` (the Fubini residual
    /// relative to the largest slope change).
    pub fn satisfies(&self, tol: f64) -> bool {
        let d = &self.diagnostics;
        let scale = self.slope_changes.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        d.min_gap >= -tol
            && d.knot_equality_error <= tol
            && d.fubini_residual <= tol * scale
            && d.df_match_error <= tol
            && d.mass_error.map_or(true, |e| e <= 1e-8)
    }
}
