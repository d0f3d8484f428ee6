use thiserror::Error;

use crate::estimator::ConvexFit;
use crate::invelope::InvelopeResult;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-contract input (non-finite values, unsorted
    /// abscissae, too few points, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A query outside the domain where an operation is defined, e.g. the
    /// left derivative at the first breakpoint.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was applied to a fit or sample of the wrong mode.
    #[error("mode mismatch: {0}")]
    Mode(String),

    /// The convex LSE solver ran out of iterations before the
    /// characterization conditions were met. Carries the best iterate.
    #[error("solver did not converge after {iterations} iterations: {reason}")]
    Convergence {
        iterations: usize,
        reason: String,
        best: Box<ConvexFit>,
    },

    /// The invelope k-schedule was exhausted before the interior solution
    /// stabilised. Carries the last iterate.
    #[error("invelope schedule exhausted without convergence (last k = {k})")]
    InvelopeSchedule { k: f64, last: Box<InvelopeResult> },

    /// A quadratic subproblem became infeasible or singular. With consistent
    /// constraints this indicates a bug.
    #[error("quadratic program failure: {0}")]
    Qp(String),

    /// Significance level not covered by a quantile table.
    #[error("alpha = {alpha} outside table range [{lo}, {hi}]")]
    AlphaOutOfRange { alpha: f64, lo: f64, hi: f64 },

    /// An experiment produced too many fits that miss their tolerances.
    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
