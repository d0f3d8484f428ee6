#![allow(dead_code)]

pub mod oracle;

use convex_lse::estimator::{ConvexFit, EmpiricalMeasure, Mode};

/// Sup-norm distance between a fit and the dense-grid oracle for the same
/// data. The density oracle runs on `[0, 1.25 max(last breakpoint, max X)]`.
pub fn oracle_distance(fit: &ConvexFit, data: &EmpiricalMeasure) -> f64 {
    let bp = fit.estimate.breakpoints();
    let o = match data.mode() {
        Mode::Density => {
            let hi = 1.25 * bp[bp.len() - 1].max(data.max_point());
            // ties enter the oracle once per observation
            let obs: Vec<f64> = data
                .points()
                .iter()
                .zip(data.responses())
                .flat_map(|(&x, k)| std::iter::repeat(x).take(k.round() as usize))
                .collect();
            oracle::density(&obs, hi, bp)
        }
        Mode::Regression => oracle::regression(data.points(), &data.responses(), bp),
    };
    assert!(o.slope_increases().iter().all(|b| *b >= -1e-6), "oracle solution is not convex");
    o.distance(|t| fit.estimate.eval(t), bp)
}
