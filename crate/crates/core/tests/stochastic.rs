use convex_lse::stochastic::*;
use proptest::prelude::*;

/// Composite Simpson rule with `m` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let inner: f64 = (1..m).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn tri_cdf(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    2.0 * t - t * t
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn triangular_quantile_examples() {
    assert_eq!(triangular_quantile(0.0), 0.0);
    assert_eq!(triangular_quantile(0.75), 0.5);
    assert_eq!(TruthSpec::uniform().quantile(0.5).unwrap(), 0.5);
}

#[test]
fn triangular_sample_ks() {
    let s = sample_triangular(100_000, 42).unwrap();
    let n = s.n() as f64;
    let mut below = 0.0;
    let mut ks: f64 = 0.0;
    for (&x, k) in s.points().iter().zip(s.responses()) {
        let f = tri_cdf(x);
        ks = ks.max((below / n - f).abs());
        below += k;
        ks = ks.max((below / n - f).abs());
    }
    assert!(ks <= 0.01, "KS {ks}");
}

#[test]
fn generic_inversion_matches_triangular() {
    let a = sample_triangular(500, 9).unwrap();
    let b = sample_pwl_density(&TruthSpec::triangular(), 500, 9).unwrap();
    assert_eq!(a.points().len(), b.points().len());
    for (x, y) in a.points().iter().zip(b.points()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn densities_integrate_to_one() {
    let truths = [
        TruthSpec::triangular(),
        TruthSpec::uniform(),
        TruthSpec::case_a(),
        TruthSpec::case_b(2.0).unwrap(),
        TruthSpec::case_b(3.5).unwrap(),
        TruthSpec::case_c(2.0).unwrap(),
    ];
    for t in &truths {
        // split at every piece boundary so Simpson is exact on each piece
        let mass: f64 = t.pieces.iter().map(|p| simpson(|x| t.eval(x.min(p.hi - 1e-15)), p.lo, p.hi, 2000)).sum();
        assert!((mass - 1.0).abs() < 1e-10, "{:?}: {mass}", t.boundary);
        assert!((t.cdf(t.end()) - 1.0).abs() < 1e-12);
        for u in [0.1, 0.37, 0.5, 0.93] {
            assert!((t.cdf(t.quantile(u).unwrap()) - u).abs() < 1e-12);
        }
    }
}

#[test]
fn boundary_case_sign_constraints() {
    use BoundaryShape::*;
    let a = TruthSpec::case_a().boundary.unwrap();
    assert!(a.k1 + a.k2 < 0.0 && a.k2 > 0.0);
    for t in [TruthSpec::case_b(2.0).unwrap(), TruthSpec::case_c(2.0).unwrap()] {
        let p = t.boundary.unwrap();
        assert!(p.k1 < 0.0 && p.k2 > 0.0 && p.alpha > 1.0);
    }
    assert!(TruthSpec::boundary_case(A, 0.4, -1.0, 2.0, 1.0).is_err());
    assert!(TruthSpec::boundary_case(A, 0.4, -3.0, -0.5, 1.0).is_err());
    assert!(TruthSpec::boundary_case(B, 0.4, -1.0, 1.0, 0.5).is_err());
    assert!(TruthSpec::boundary_case(C, 0.5, -1.0, -1.0, 2.0).is_err());
    assert!(TruthSpec::case_b(1.0).is_err());
}

#[test]
fn case_a_sample_mean() {
    let t = TruthSpec::case_a();
    let x0 = t.boundary.unwrap().x0;
    let mean = simpson(|x| x * t.eval(x), 0.0, x0, 1000) + simpson(|x| x * t.eval(x.min(1.0 - 1e-15)), x0, 1.0, 1000);
    let second = simpson(|x| x * x * t.eval(x), 0.0, x0, 1000) + simpson(|x| x * x * t.eval(x.min(1.0 - 1e-15)), x0, 1.0, 1000);
    let sd = (second - mean * mean).sqrt();
    let s = sample_pwl_density(&t, 10_000, 3).unwrap();
    let xs: Vec<f64> = s
        .points()
        .iter()
        .zip(s.responses())
        .flat_map(|(&x, k)| std::iter::repeat(x).take(k as usize))
        .collect();
    let (m, _) = mean_var(&xs);
    assert!((m - mean).abs() <= 3.0 * sd / 100.0, "mean {m} vs {mean}");
    assert!((t.mean() - mean).abs() < 1e-10);
}

#[test]
fn bridge_path_endpoints_are_zero() {
    let p = gaussian_path(64, PathKind::Bridge, Some(&TruthSpec::triangular()), 5).unwrap();
    assert_eq!(p.x[0], 0.0);
    assert_eq!(p.x[64], 0.0);
    assert_eq!(p.y[0], 0.0);
    assert!(gaussian_path(8, PathKind::Motion, None, 5).is_err());
    assert!(gaussian_path(64, PathKind::Bridge, None, 5).is_err());
}

fn draws(kind: PathKind, reps: usize) -> Vec<Vec<f64>> {
    let truth = TruthSpec::triangular();
    (0..reps as u64)
        .map(|i| gaussian_path_with(16, kind, Some(&truth), &mut rng(77, i)).unwrap().x)
        .collect()
}

#[test]
fn bridge_covariance() {
    let paths = draws(PathKind::Bridge, 10_000);
    let n = paths.len() as f64;
    let (_, var) = mean_var(&paths.iter().map(|x| x[8]).collect::<Vec<_>>());
    let v0 = tri_cdf(0.5) * (1.0 - tri_cdf(0.5));
    assert!((v0 - 0.1875).abs() < 1e-15);
    assert!((var - v0).abs() <= 3.0 * v0 * (2.0 / n).sqrt(), "variance {var}");
    for (i, j) in [(4, 8), (4, 12), (8, 12)] {
        let (s, t) = (i as f64 / 16.0, j as f64 / 16.0);
        let (vs, vt) = (tri_cdf(s) * (1.0 - tri_cdf(s)), tri_cdf(t) * (1.0 - tri_cdf(t)));
        let c0 = tri_cdf(s) * (1.0 - tri_cdf(t));
        let c = paths.iter().map(|x| x[i] * x[j]).sum::<f64>() / n;
        let se = ((vs * vt + c0 * c0) / n).sqrt();
        assert!((c - c0).abs() <= 4.0 * se, "cov({s},{t}) = {c} vs {c0}");
    }
}

#[test]
fn motion_variance() {
    let paths = draws(PathKind::Motion, 10_000);
    let (_, var) = mean_var(&paths.iter().map(|x| x[8]).collect::<Vec<_>>());
    assert!((var - 0.5).abs() <= 3.0 * 0.5 * (2.0 / 10_000f64).sqrt(), "variance {var}");
}

#[test]
fn trapezoid_integral_is_second_order() {
    let exact = 2.0 / std::f64::consts::PI;
    let mut scaled = vec![];
    for m in [16, 64, 256, 1024] {
        let x = (0..=m).map(|i| (std::f64::consts::PI * i as f64 / m as f64).sin()).collect();
        let p = GaussianPath::from_x(PathKind::Motion, x).unwrap();
        scaled.push((p.y[m] - exact).abs() * (m * m) as f64);
    }
    // error * m² tends to (f'(0) - f'(1)) / 12 = π / 6
    let c = std::f64::consts::PI / 6.0;
    assert!(scaled.iter().all(|s| *s <= 0.53), "{scaled:?}");
    assert!((scaled[3] - c).abs() < 1e-4);
}

#[test]
fn regression_design_and_noise() {
    assert_eq!(fixed_design(3), vec![0.25, 0.5, 0.75]);
    let d = simulate_regression(&TruthSpec::regression_linear(1.0, 2.0), 9, 0.0, 1).unwrap();
    let y = d.responses();
    let step = y[1] - y[0];
    assert!(y.windows(2).all(|w| (w[1] - w[0] - step).abs() < 1e-12));
    let t = TruthSpec::regression_square();
    let d = simulate_regression(&t, 10_000, 1.0, 8).unwrap();
    let resid: Vec<f64> = d.points().iter().zip(d.responses()).map(|(&x, y)| y - t.eval(x)).collect();
    let (m, v) = mean_var(&resid);
    assert!(m.abs() <= 3.0 * (v / 1e4).sqrt());
    assert!(simulate_regression(&t, 10, -1.0, 0).is_err());
    assert!(simulate_regression(&TruthSpec::triangular(), 10, 1.0, 0).is_err());
}

#[test]
fn path_csv_header() {
    let p = gaussian_path(16, PathKind::Motion, None, 1).unwrap();
    let csv = p.to_csv(&[("seed", "1".into())]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# seed=1"));
    assert_eq!(lines.next(), Some("t,x,y"));
    assert_eq!(csv.lines().count(), 2 + 17);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn same_seed_same_output(seed in any::<u64>(), m in 16usize..200) {
        let t = TruthSpec::triangular();
        prop_assert_eq!(sample_triangular(50, seed).unwrap(), sample_triangular(50, seed).unwrap());
        let a = gaussian_path(m, PathKind::Bridge, Some(&t), seed).unwrap();
        let b = gaussian_path(m, PathKind::Bridge, Some(&t), seed).unwrap();
        prop_assert_eq!(&a, &b);
        let c = gaussian_path_with(m, PathKind::Bridge, Some(&t), &mut rng(seed, 1)).unwrap();
        prop_assert_ne!(&a.x, &c.x);
    }

    #[test]
    fn coarsened_path_keeps_values(seed in any::<u64>()) {
        let p = gaussian_path(64, PathKind::Motion, None, seed).unwrap();
        let c = p.coarsen(4).unwrap();
        prop_assert_eq!(c.m(), 16);
        for i in 0..=16 {
            prop_assert_eq!(c.x[i], p.x[4 * i]);
        }
        prop_assert!(p.coarsen(3).is_err());
    }
}
