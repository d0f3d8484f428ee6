//! Convex least squares estimation.
//!
//! Density mode minimises `½∫g² - ∫g d𝔽_n` over nonnegative convex
//! integrable functions on `[0, ∞)`; regression mode minimises
//! `½∫_0^1 g² - (1/n) sum_i Y_i g(X_i)` over convex functions on `[0, 1]`.
//! Both solutions are piecewise linear and are computed by support
//! reduction (see `solver`).

mod measure;
mod report;
mod solver;

pub use measure::{EmpiricalMeasure, Mode};
pub use report::CharacterizationReport;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pwl::{Extension, PiecewiseLinear, PiecewisePoly};
use crate::stochastic::TruthSpec;
use solver::{Problem, Settings, Shape};

/// Solver controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Tolerance on the characterization residuals.
    pub tol: f64,
    /// Outer iteration cap; `None` means `10 n`.
    pub max_iter: Option<usize>,
    /// Density mode searches for knots up to
    /// `max X + tail_factor * (max X - min X)`.
    pub tail_factor: f64,
    /// Knots to start from, used when they give a feasible fit.
    pub initial_knots: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
            tail_factor: 1.5,
            initial_knots: None,
        }
    }
}

/// A convex least squares solution with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexFit {
    pub mode: Mode,
    /// The fitted function: clamped to zero right of the last knot in
    /// density mode, on `[0, 1]` in regression mode.
    pub estimate: PiecewiseLinear,
    pub knots: Vec<f64>,
    /// Slope change at each knot (all positive).
    pub slope_changes: Vec<f64>,
    /// Criterion value at the solution.
    pub objective: f64,
    pub diagnostics: CharacterizationReport,
    pub iterations: usize,
    /// Criterion value after every accepted solver step.
    pub objective_trace: Vec<f64>,
    pub options: SolverOptions,
}

impl ConvexFit {
    /// Integral of the estimate from 0.
    pub fn integrated(&self) -> PiecewisePoly {
        self.estimate.antiderivative(0.0, 0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("fits hold finite values")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// CSV with columns `x,estimate[,truth]` on the given grid.
    pub fn to_csv(&self, grid: &[f64], truth: Option<&TruthSpec>, header: &[(&str, String)]) -> String {
        let mut s = String::new();
        for (k, v) in header {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str(if truth.is_some() { "x,estimate,truth\n" } else { "x,estimate\n" });
        for &x in grid {
            let _ = write!(s, "{},{}", x, self.estimate.eval(x));
            if let Some(t) = truth {
                let _ = write!(s, ",{}", t.eval(x));
            }
            s.push('\n');
        }
        s
    }

    fn shape(&self) -> Shape {
        let x = self.estimate.breakpoints().to_vec();
        let v = self.estimate.values().to_vec();
        Shape::new(self.mode == Mode::Density, x, v)
    }
}

pub(crate) fn shape_to_pwl(shape: &Shape) -> PiecewiseLinear {
    let ext = if shape.density {
        Extension::ClampZeroRight
    } else {
        Extension::Extend
    };
    PiecewiseLinear::new(shape.nodes.clone(), shape.vals.clone(), ext).expect("solver nodes are increasing")
}

fn run(data: &EmpiricalMeasure, opts: &SolverOptions) -> Result<ConvexFit> {
    let density = data.mode() == Mode::Density;
    if !(opts.tol > 0.0) || !(opts.tail_factor > 0.0) {
        return Err(Error::Input("tolerance and tail factor must be positive".into()));
    }
    let pb = Problem::new(data, density, opts.tail_factor);
    let settings = Settings {
        tol: opts.tol,
        max_iter: opts.max_iter.unwrap_or(10 * data.n()),
        initial_knots: opts.initial_knots.clone(),
    };
    let out = pb.run(&settings);
    let shape = out.shape;
    let diagnostics = report::compute(&shape, &pb, None)?;
    let fit = ConvexFit {
        mode: data.mode(),
        estimate: shape_to_pwl(&shape),
        knots: shape.knots().to_vec(),
        slope_changes: shape.betas(),
        objective: pb.objective(&shape),
        diagnostics,
        iterations: out.iterations,
        objective_trace: out.trace,
        options: opts.clone(),
    };
    if !out.converged || !fit.satisfies(opts.tol) {
        let reason = if out.converged {
            format!("characterization residuals above tolerance: {:?}", fit.diagnostics)
        } else {
            out.reason
        };
        return Err(Error::Convergence {
            iterations: fit.iterations,
            reason,
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

/// Convex least squares density estimate from a sample.
pub fn fit_convex_density(sample: &EmpiricalMeasure, opts: &SolverOptions) -> Result<ConvexFit> {
    if sample.mode() != Mode::Density {
        return Err(Error::Mode("density fit needs a density sample".into()));
    }
    run(sample, opts)
}

/// Convex least squares regression estimate on `[0, 1]`.
pub fn fit_convex_regression(data: &EmpiricalMeasure, opts: &SolverOptions) -> Result<ConvexFit> {
    if data.mode() != Mode::Regression {
        return Err(Error::Mode("regression fit needs regression data".into()));
    }
    run(data, opts)
}

/// Diagnostics of `fit` against `data`, with the Marshall ratio when a truth
/// is given.
pub fn characterization_report(
    fit: &ConvexFit,
    data: &EmpiricalMeasure,
    truth: Option<&TruthSpec>,
) -> Result<CharacterizationReport> {
    if fit.mode != data.mode() {
        return Err(Error::Mode("fit and data modes differ".into()));
    }
    let pb = Problem::new(data, fit.mode == Mode::Density, fit.options.tail_factor);
    let bp = fit.estimate.breakpoints();
    if bp[0] != 0.0 || (fit.mode == Mode::Regression && bp[bp.len() - 1] != 1.0) {
        return Err(Error::Input("estimate breakpoints do not span the fit domain".into()));
    }
    report::compute(&fit.shape(), &pb, truth)
}

/// Value of a density estimate at zero.
pub fn value_at_zero(fit: &ConvexFit) -> Result<f64> {
    if fit.mode != Mode::Density {
        return Err(Error::Mode("value at zero is defined for density fits".into()));
    }
    Ok(fit.estimate.eval(0.0))
}
