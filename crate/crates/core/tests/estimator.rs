mod common;

use common::oracle_distance;
use convex_lse::estimator::*;
use convex_lse::pwl::{Extension, PiecewiseLinear};
use convex_lse::stochastic::*;
use convex_lse::Error;
use proptest::prelude::*;

fn opts() -> SolverOptions {
    SolverOptions::default()
}

fn check_density_invariants(fit: &ConvexFit) {
    let f = &fit.estimate;
    assert!(f.is_convex(1e-9));
    assert!(f.is_nonincreasing(1e-9));
    assert!(f.values().iter().all(|v| *v >= -1e-12));
    let bp = f.breakpoints();
    assert!((f.integral(0.0, bp[bp.len() - 1]) - 1.0).abs() <= 1e-8);
    assert!(fit.objective <= 0.0);
}

#[test]
fn density_matches_oracle_n25() {
    let s = sample_triangular(25, 2013).unwrap();
    let fit = fit_convex_density(&s, &opts()).unwrap();
    check_density_invariants(&fit);
    assert!(oracle_distance(&fit, &s) <= 1e-4);
}

#[test]
fn regression_matches_oracle_n30() {
    let d = simulate_regression(&TruthSpec::regression_linear(0.0, 1.0), 30, 0.1, 2013).unwrap();
    let fit = fit_convex_regression(&d, &opts()).unwrap();
    assert!(fit.estimate.is_convex(1e-9));
    assert!(oracle_distance(&fit, &d) <= 1e-4);
}

#[test]
fn random_small_instances_match_oracle() {
    for seed in 0..6u64 {
        let n = 8 + 4 * seed as usize;
        let s = sample_pwl_density(&TruthSpec::case_a(), n, seed).unwrap();
        let fit = fit_convex_density(&s, &opts()).unwrap();
        assert!(oracle_distance(&fit, &s) <= 1e-4, "density seed {seed}");
        let d = simulate_regression(&TruthSpec::regression_square(), n, 0.2, seed).unwrap();
        let fit = fit_convex_regression(&d, &opts()).unwrap();
        assert!(oracle_distance(&fit, &d) <= 1e-4, "regression seed {seed}");
    }
}

#[test]
fn marshall_ratio_at_n500() {
    let truth = TruthSpec::triangular();
    let s = sample_triangular(500, 7).unwrap();
    let fit = fit_convex_density(&s, &opts()).unwrap();
    let rep = characterization_report(&fit, &s, Some(&truth)).unwrap();
    assert!(rep.marshall_ratio.unwrap() <= 2.0);
    assert!(rep.df_match_error <= 1e-8);
    check_density_invariants(&fit);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn marshall_inequality(seed in any::<u64>(), n in 20usize..400) {
        let s = sample_triangular(n, seed).unwrap();
        let fit = fit_convex_density(&s, &opts()).unwrap();
        let [num, den] = characterization_report(&fit, &s, Some(&TruthSpec::triangular()))
            .unwrap()
            .marshall_distances
            .unwrap();
        prop_assert!(num <= 2.0 * den + 1e-9);

        let truth = TruthSpec::regression_linear(0.5, -0.3);
        let d = simulate_regression(&truth, n, 0.3, seed).unwrap();
        let fit = fit_convex_regression(&d, &opts()).unwrap();
        let [num, den] = characterization_report(&fit, &d, Some(&truth)).unwrap().marshall_distances.unwrap();
        prop_assert!(num <= 2.0 * den + 1e-9);
    }

    #[test]
    fn fits_satisfy_their_characterization(seed in any::<u64>(), n in 5usize..300) {
        let s = sample_pwl_density(&TruthSpec::case_b(2.0).unwrap(), n, seed).unwrap();
        let fit = fit_convex_density(&s, &opts()).unwrap();
        check_density_invariants(&fit);
        let d = &fit.diagnostics;
        prop_assert!(d.min_gap >= -1e-8 && d.knot_equality_error <= 1e-8 && d.df_match_error <= 1e-8);
        prop_assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));

        let r = simulate_regression(&TruthSpec::regression_square(), n.max(2), 0.1, seed).unwrap();
        let fit = fit_convex_regression(&r, &opts()).unwrap();
        let d = &fit.diagnostics;
        prop_assert!(fit.estimate.is_convex(1e-9));
        prop_assert!(d.min_gap >= -1e-8 && d.knot_equality_error <= 1e-8 && d.df_match_error <= 1e-8);
        prop_assert!(d.fubini_residual <= 1e-8 * fit.slope_changes.iter().fold(1.0f64, |a, b| a.max(*b)));
        prop_assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

#[test]
fn noiseless_square_is_recovered() {
    let d = simulate_regression(&TruthSpec::regression_square(), 200, 0.0, 0).unwrap();
    let fit = fit_convex_regression(&d, &opts()).unwrap();
    let err = (0..=600)
        .map(|i| 0.2 + 0.6 * i as f64 / 600.0)
        .map(|t| (fit.estimate.eval(t) - t * t).abs())
        .fold(0.0, f64::max);
    assert!(err <= 0.05, "sup error {err}");
}

#[test]
fn noiseless_linear_meets_conditions() {
    let d = simulate_regression(&TruthSpec::regression_linear(1.0, 2.0), 2000, 0.0, 0).unwrap();
    let fit = fit_convex_regression(&d, &opts()).unwrap();
    let rep = characterization_report(&fit, &d, None).unwrap();
    assert!(rep.min_gap >= -1e-8);
    assert!(rep.knot_equality_error <= 1e-8);
}

#[test]
fn refit_from_own_knots_is_idempotent() {
    let s = sample_triangular(300, 11).unwrap();
    let fit = fit_convex_density(&s, &opts()).unwrap();
    let again = fit_convex_density(
        &s,
        &SolverOptions {
            initial_knots: Some(fit.knots.clone()),
            ..opts()
        },
    )
    .unwrap();
    let grid: Vec<f64> = (0..=2000).map(|i| 1.5 * i as f64 / 2000.0).collect();
    let d = grid.iter().map(|&t| (fit.estimate.eval(t) - again.estimate.eval(t)).abs()).fold(0.0, f64::max);
    assert!(d <= 1e-10, "{d}");

    let r = simulate_regression(&TruthSpec::regression_square(), 300, 0.1, 11).unwrap();
    let fit = fit_convex_regression(&r, &opts()).unwrap();
    let again = fit_convex_regression(
        &r,
        &SolverOptions {
            initial_knots: Some(fit.knots.clone()),
            ..opts()
        },
    )
    .unwrap();
    let d = grid.iter().map(|&t| (fit.estimate.eval(t / 1.5) - again.estimate.eval(t / 1.5)).abs()).fold(0.0, f64::max);
    assert!(d <= 1e-10, "{d}");
}

#[test]
fn ties_become_weighted_atoms() {
    let obs = vec![0.1, 0.1, 0.1, 0.3, 0.3, 0.5, 0.8, 0.8, 0.9];
    let s = EmpiricalMeasure::density(obs).unwrap();
    assert_eq!(s.n(), 9);
    assert_eq!(s.points().len(), 5);
    let fit = fit_convex_density(&s, &opts()).unwrap();
    check_density_invariants(&fit);
    assert!(oracle_distance(&fit, &s) <= 1e-4);
    assert!(EmpiricalMeasure::density(vec![0.4, 0.4, 0.4]).is_err());
    assert!(EmpiricalMeasure::density(vec![0.4, f64::NAN]).is_err());
    assert!(EmpiricalMeasure::density(vec![-0.1, 0.4]).is_err());
}

#[test]
fn value_at_zero_examples() {
    let fit_with = |x: Vec<f64>, v: Vec<f64>| {
        let s = sample_triangular(50, 1).unwrap();
        let mut fit = fit_convex_density(&s, &opts()).unwrap();
        fit.estimate = PiecewiseLinear::new(x, v, Extension::ClampZeroRight).unwrap();
        fit
    };
    assert_eq!(value_at_zero(&fit_with(vec![0.0, 1.0], vec![2.0, 0.0])).unwrap(), 2.0);
    assert_eq!(value_at_zero(&fit_with(vec![0.0, 0.5, 2.0], vec![3.0, 1.0, 0.0])).unwrap(), 3.0);
    let r = simulate_regression(&TruthSpec::regression_square(), 50, 0.1, 1).unwrap();
    let fit = fit_convex_regression(&r, &opts()).unwrap();
    assert!(matches!(value_at_zero(&fit), Err(Error::Mode(_))));
}

#[test]
fn mode_errors() {
    let s = sample_triangular(50, 1).unwrap();
    let r = simulate_regression(&TruthSpec::regression_square(), 50, 0.1, 1).unwrap();
    assert!(matches!(fit_convex_density(&r, &opts()), Err(Error::Mode(_))));
    assert!(matches!(fit_convex_regression(&s, &opts()), Err(Error::Mode(_))));
    let fit = fit_convex_density(&s, &opts()).unwrap();
    assert!(matches!(characterization_report(&fit, &r, None), Err(Error::Mode(_))));
    assert!(matches!(
        characterization_report(&fit, &s, Some(&TruthSpec::regression_square())),
        Err(Error::Mode(_))
    ));
}

#[test]
fn iteration_cap_returns_best_iterate() {
    let s = sample_triangular(400, 3).unwrap();
    let capped = SolverOptions {
        max_iter: Some(1),
        ..opts()
    };
    match fit_convex_density(&s, &capped) {
        Err(Error::Convergence { best, iterations, .. }) => {
            assert!(iterations <= 1);
            assert!(best.estimate.is_convex(1e-9));
        }
        other => panic!("expected a convergence error, got {:?}", other.map(|f| f.iterations)),
    }
}

#[test]
fn json_and_csv_exports() {
    let s = sample_triangular(100, 5).unwrap();
    let fit = fit_convex_density(&s, &opts()).unwrap();
    let back = ConvexFit::from_json(&fit.to_json()).unwrap();
    assert_eq!(back, fit);
    let csv = fit.to_csv(&[0.0, 0.5, 1.0], Some(&TruthSpec::triangular()), &[("n", "100".into())]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# n=100");
    assert_eq!(lines[1], "x,estimate,truth");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].ends_with(",0"));
}
