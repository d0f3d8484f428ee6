//! Small summary statistics used by the experiment harness.

use rand::Rng;

/// Linear-interpolation quantile (type 7) of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> f64 {
    quantile_sorted(&sorted(values), 0.5)
}

/// `(q1, median, q3)`.
pub fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    let s = sorted(values);
    (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.75))
}

/// Least squares line `y = intercept + slope x`; returns `(intercept, slope)`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert!(x.len() == y.len() && x.len() >= 2, "ols needs two or more paired points");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Slope of `ln median(|group|)` against `ln n`, with a bootstrap standard
/// error and percentile interval from resampling replicates within each
/// group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeEstimate {
    pub intercept: f64,
    pub slope: f64,
    pub stderr: f64,
    pub ci: [f64; 2],
}

pub fn log_log_slope<R: Rng>(ns: &[usize], groups: &[Vec<f64>], resamples: usize, rng: &mut R) -> SlopeEstimate {
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let log_median = |g: &[f64]| median(&g.iter().map(|v| v.abs()).collect::<Vec<_>>()).ln();
    let ly: Vec<f64> = groups.iter().map(|g| log_median(g)).collect();
    let (intercept, slope) = ols(&lx, &ly);
    let mut boot = Vec::with_capacity(resamples);
    let mut buf = Vec::new();
    for _ in 0..resamples {
        let ys: Vec<f64> = groups
            .iter()
            .map(|g| {
                buf.clear();
                buf.extend((0..g.len()).map(|_| g[rng.gen_range(0..g.len())]));
                log_median(&buf)
            })
            .collect();
        boot.push(ols(&lx, &ys).1);
    }
    let (stderr, ci) = if boot.len() >= 2 {
        let m = boot.iter().sum::<f64>() / boot.len() as f64;
        let var = boot.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (boot.len() - 1) as f64;
        let s = sorted(&boot);
        (var.sqrt(), [quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975)])
    } else {
        (f64::NAN, [f64::NAN, f64::NAN])
    };
    SlopeEstimate {
        intercept,
        slope,
        stderr,
        ci,
    }
}

/// Two-sample Kolmogorov–Smirnov distance `sup_t |F_a(t) - F_b(t)|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS distance needs nonempty samples");
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quartiles_of_small_sample() {
        let (q1, m, q3) = quartiles(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((q1, m, q3), (2.0, 3.0, 4.0));
        assert_eq!(median(&[1.0, 2.0]), 1.5);
    }

    #[test]
    fn ols_recovers_a_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 - 2.0 * v).collect();
        let (a, b) = ols(&x, &y);
        assert_abs_diff_eq!(a, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_power_law_has_zero_bootstrap_spread() {
        let ns = [100, 400, 1600];
        let groups: Vec<Vec<f64>> = ns.iter().map(|&n| vec![(n as f64).powf(-0.5); 20]).collect();
        let s = log_log_slope(&ns, &groups, 50, &mut rng(0, 0));
        assert_abs_diff_eq!(s.slope, -0.5, epsilon = 1e-12);
        assert!(s.stderr < 1e-12);
    }

    #[test]
    fn ks_brute_force() {
        let a = [0.1, 0.4, 0.4, 0.9];
        let b = [0.2, 0.4, 0.5];
        let ecdf = |s: &[f64], t: f64| s.iter().filter(|v| **v <= t).count() as f64 / s.len() as f64;
        let brute = a
            .iter()
            .chain(&b)
            .map(|&t| (ecdf(&a, t) - ecdf(&b, t)).abs())
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(ks_distance(&a, &b), brute, epsilon = 1e-15);
        assert_eq!(ks_distance(&a, &a), 0.0);
        assert_eq!(ks_distance(&[0.0], &[1.0]), 1.0);
    }
}
