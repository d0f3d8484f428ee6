use approx::assert_relative_eq;
use convex_lse::pwl::{sup_diff, Extension, PiecewiseLinear, StepFn, SupMode};
use proptest::prelude::*;

fn pwl(pts: &[(f64, f64)]) -> PiecewiseLinear {
    let (x, v) = pts.iter().copied().unzip();
    PiecewiseLinear::new(x, v, Extension::Extend).unwrap()
}

#[test]
fn triangular_density_integrals() {
    let f = pwl(&[(0.0, 2.0), (1.0, 0.0)]);
    let big_f = f.antiderivative(0.0, 0.0);
    assert_relative_eq!(big_f.eval(1.0), 1.0, epsilon = 1e-15);
    assert_relative_eq!(big_f.eval(0.5), 0.75, epsilon = 1e-15);
    let big_h = big_f.antiderivative(0.0, 0.0);
    assert_relative_eq!(big_h.eval(1.0), 2.0 / 3.0, epsilon = 1e-15);
}

#[test]
fn knot_examples() {
    assert_eq!(pwl(&[(0.0, 1.0), (1.0, 0.0), (2.0, 1.0)]).knots(1e-9), vec![1.0]);
    assert!(pwl(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]).knots(1e-9).is_empty());
    assert_eq!(pwl(&[(0.0, 3.0), (1.0, 1.0), (2.0, 0.0), (3.0, 0.0)]).knots(1e-9), vec![1.0, 2.0]);
}

#[test]
fn convexity_examples() {
    assert!(pwl(&[(0.0, 1.0), (1.0, 0.0), (2.0, 1.0)]).is_convex(0.0));
    assert!(!pwl(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).is_convex(0.0));
    assert!(pwl(&[(0.0, 0.0), (2.0, 1.0)]).is_convex(0.0));
}

#[test]
fn sup_diff_examples() {
    let f = pwl(&[(0.0, 2.0), (1.0, 0.0)]).to_poly();
    assert_eq!(sup_diff(&f, &f, 0.0, 1.0, SupMode::Abs).value, 0.0);
    let one = pwl(&[(0.0, 1.0), (1.0, 1.0)]).to_poly();
    let d = sup_diff(&f, &one, 0.0, 1.0, SupMode::Abs);
    assert_relative_eq!(d.value, 1.0, epsilon = 1e-15);
    assert!(d.argmax == 0.0 || d.argmax == 1.0);

    // F0(t) = 2t - t² against the empirical distribution of {0.5}
    let f0 = pwl(&[(0.0, 2.0), (1.0, 0.0)]).antiderivative(0.0, 0.0);
    let emp = StepFn::new(vec![0.5], vec![1.0], 0.0).unwrap().to_poly();
    let d = sup_diff(&f0, &emp, 0.0, 1.0, SupMode::Abs);
    assert_relative_eq!(d.value, 0.75, epsilon = 1e-15);
    assert_eq!(d.argmax, 0.5);
    assert!(d.left_limit);
    let scan = (0..=1_000_000)
        .map(|i| i as f64 / 1e6)
        .map(|t| {
            // both one-sided values of the step function
            let (left, right) = (if t <= 0.5 { 0.0 } else { 1.0 }, if t < 0.5 { 0.0 } else { 1.0 });
            let f = 2.0 * t - t * t;
            (f - left).abs().max((f - right).abs())
        })
        .fold(0.0, f64::max);
    assert!((scan - 0.75).abs() <= 1e-6);
}

/// Random piecewise-linear function on `[0, 1]` with breakpoints on the
/// lattice `k / 1000`.
fn lattice_pwl() -> impl Strategy<Value = PiecewiseLinear> {
    (prop::collection::btree_set(1u32..1000, 0..8), prop::collection::vec(-3.0f64..3.0, 10))
        .prop_map(|(inner, vals)| {
            let x: Vec<f64> = std::iter::once(0.0)
                .chain(inner.iter().map(|&k| k as f64 / 1000.0))
                .chain(std::iter::once(1.0))
                .collect();
            let v = vals[..x.len()].to_vec();
            PiecewiseLinear::new(x, v, Extension::Extend).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sup_diff_matches_fine_scan(f in lattice_pwl(), g in lattice_pwl(), signed in any::<bool>()) {
        let mode = if signed { SupMode::Signed } else { SupMode::Abs };
        let exact = sup_diff(&f.to_poly(), &g.to_poly(), 0.0, 1.0, mode).value;
        let scan = (0..=1_000_000)
            .map(|i| {
                let t = i as f64 / 1e6;
                let d = f.eval(t) - g.eval(t);
                if signed { d } else { d.abs() }
            })
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((exact - scan).abs() <= 1e-6, "exact {} scan {}", exact, scan);
    }
}

proptest! {
    #[test]
    fn antiderivative_matches_segment_integrals(f in lattice_pwl(), ax in 0.0f64..1.0, av in -2.0f64..2.0) {
        let big = f.antiderivative(ax, av);
        let x = f.breakpoints();
        let v = f.values();
        // closed-form trapezoid integral from 0 to each breakpoint
        let mut acc = vec![0.0];
        for i in 1..x.len() {
            acc.push(acc[i - 1] + 0.5 * (x[i] - x[i - 1]) * (v[i] + v[i - 1]));
        }
        let at = |t: f64| {
            let i = x.partition_point(|&b| b <= t).clamp(1, x.len() - 1) - 1;
            acc[i] + 0.5 * (t - x[i]) * (v[i] + f.eval(t))
        };
        for t in x.iter().copied().chain([0.123, 0.5, 0.987]) {
            let want = av + at(t) - at(ax);
            let scale = want.abs().max(1.0);
            prop_assert!((big.eval(t) - want).abs() <= 1e-12 * scale);
        }
        prop_assert!((big.derivative().eval(0.4) - f.eval(0.4)).abs() < 1e-12);
    }

    #[test]
    fn knot_round_trip(slopes in prop::collection::vec(-5.0f64..5.0, 2..9), start in -1.0f64..1.0) {
        // a convex function: sorted slopes on a uniform partition
        let mut s = slopes.clone();
        s.sort_by(f64::total_cmp);
        let m = s.len();
        let x: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        let mut v = vec![start];
        for i in 0..m {
            v.push(v[i] + s[i] / m as f64);
        }
        let f = PiecewiseLinear::new(x, v, Extension::Extend).unwrap();
        prop_assert!(f.is_convex(1e-12));
        let mut nodes = vec![0.0];
        nodes.extend(f.knots(1e-9));
        nodes.push(1.0);
        let vals = nodes.iter().map(|&t| f.eval(t)).collect();
        let g = PiecewiseLinear::new(nodes, vals, Extension::Extend).unwrap();
        for i in 0..=200 {
            let t = -0.1 + 1.2 * i as f64 / 200.0;
            prop_assert!((f.eval(t) - g.eval(t)).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact(f in lattice_pwl()) {
        let back = PiecewiseLinear::from_json(&f.to_json()).unwrap();
        prop_assert_eq!(&back, &f);
        prop_assert_eq!(back.to_json(), f.to_json());
    }
}

#[test]
fn json_shape() {
    let f = PiecewiseLinear::new(vec![0.0, 1.0], vec![2.0, 0.0], Extension::ClampZeroRight).unwrap();
    let v: serde_json::Value = serde_json::from_str(&f.to_json()).unwrap();
    assert_eq!(v["ext"], "clamp");
    assert_eq!(v["x"], serde_json::json!([0.0, 1.0]));
    assert!(PiecewiseLinear::from_json(r#"{"x":[1.0,0.0],"v":[0.0,0.0],"ext":"extend"}"#).is_err());
}
