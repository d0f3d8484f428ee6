//! Seeded simulation studies of the estimators and the linearity test.
//!
//! An experiment is a pure function of its [`ExperimentConfig`]. Replicate
//! `r` at the `j`-th sample size draws from stream
//! `tag << 48 | j << 32 | r` of the master seed (see [`crate::stochastic::rng`]),
//! so results do not depend on the number of worker threads.

mod stats;

pub use stats::{ks_distance, log_log_slope, median, ols, quantile_sorted, quartiles, SlopeEstimate};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::estimator::{
    characterization_report, fit_convex_density, fit_convex_regression, CharacterizationReport, ConvexFit,
    EmpiricalMeasure, SolverOptions,
};
use crate::invelope::{compute_invelope, rescale_regression_limit, InvelopeOptions, InvelopeResult};
use crate::lintest::{decide, statistic_of_estimate, QuantileTable};
use crate::stochastic::{
    gaussian_path_with, rng, sample_density_with, simulate_regression_with, PathKind, TruthKind, TruthSpec,
};

/// Version of the JSON config layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: &[&str] = &[
    "interior-rate",
    "pointwise-law",
    "boundary-a",
    "boundary-b",
    "zero-behavior",
    "test-calibration",
    "regression-suite",
    "regression-noiseless",
];

const TAG_LIMIT: u64 = 0xff;
const TAG_BOOT: u64 = 0xfe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    InteriorRate,
    BoundaryAdaptation,
    ZeroBehavior,
    TestCalibration,
    RegressionSuite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTruth {
    pub name: String,
    pub truth: TruthSpec,
}

/// Closed interval with optional ends.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Window {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
}

impl Window {
    pub fn new(lo: Option<f64>, hi: Option<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        !v.is_nan() && self.lo.map_or(true, |l| v >= l) && self.hi.map_or(true, |h| v <= h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Label used in output headers and file names.
    pub id: String,
    pub kind: ExperimentKind,
    pub truth: TruthSpec,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    /// Evaluation points.
    #[serde(default)]
    pub points: Vec<f64>,
    /// Levels for the linearity test.
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// Margin kept from the ends of the linear region.
    pub delta: f64,
    /// Noise level in regression experiments.
    #[serde(default)]
    pub sigma: f64,
    /// Alternatives for power estimates.
    #[serde(default)]
    pub alternatives: Vec<NamedTruth>,
    /// Invelope draws to compare the largest sample size against; 0 skips.
    #[serde(default)]
    pub limit_draws: usize,
    #[serde(default = "default_limit_grid")]
    pub limit_grid: usize,
    /// Critical values; the shipped table when absent.
    #[serde(default)]
    pub table: Option<QuantileTable>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub invelope: InvelopeOptions,
    /// Acceptance windows keyed by check name.
    #[serde(default)]
    pub windows: BTreeMap<String, Window>,
    /// Keep per-replicate records in the result.
    #[serde(default)]
    pub keep_records: bool,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_limit_grid() -> usize {
    800
}

impl ExperimentConfig {
    fn base(id: &str, kind: ExperimentKind, truth: TruthSpec, n_grid: Vec<usize>, replicates: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            id: id.to_string(),
            kind,
            truth,
            n_grid,
            replicates,
            points: vec![],
            alphas: vec![],
            delta: 0.05,
            sigma: 0.0,
            alternatives: vec![],
            limit_draws: 0,
            limit_grid: default_limit_grid(),
            table: None,
            solver: SolverOptions::default(),
            invelope: InvelopeOptions::default(),
            windows: BTreeMap::new(),
            keep_records: false,
            seed: 20130,
            output: None,
        }
    }

    fn window(mut self, name: &str, lo: Option<f64>, hi: Option<f64>) -> Self {
        self.windows.insert(name.to_string(), Window::new(lo, hi));
        self
    }

    /// Desk-scale default configurations.
    pub fn preset(name: &str) -> Result<Self> {
        use ExperimentKind::*;
        let cfg = match name {
            "interior-rate" => {
                let mut c = Self::base(name, InteriorRate, TruthSpec::triangular(), vec![500, 2000, 8000], 200);
                c.points = vec![0.5];
                c.window("median_spread:error@0.5", None, Some(2.0))
                    .window("median_spread:derivative_error@0.5", None, Some(2.0))
            }
            "pointwise-law" => {
                let mut c = Self::base(name, InteriorRate, TruthSpec::triangular(), vec![8000], 500);
                c.points = vec![0.5];
                c.limit_draws = 500;
                c.window("ks:error@0.5", None, Some(0.15))
            }
            "boundary-a" => {
                let mut c = Self::base(
                    name,
                    BoundaryAdaptation,
                    TruthSpec::case_a(),
                    vec![500, 2000, 8000, 32000],
                    200,
                );
                c.points = vec![0.4];
                c.window("slope:abs_error@0.4", Some(-0.45), Some(-0.22))
                    .window("q90_growth:negative_part@0.4", None, Some(2.0))
            }
            "boundary-b" => {
                let mut c = Self::base(
                    name,
                    BoundaryAdaptation,
                    TruthSpec::case_b(2.0)?,
                    vec![500, 2000, 8000, 32000],
                    200,
                );
                c.points = vec![0.4];
                c.window("slope:abs_error@0.4", Some(-0.52), Some(-0.28))
                    .window("q90_growth:negative_part@0.4", None, Some(2.0))
            }
            "zero-behavior" => {
                let mut c = Self::base(name, ZeroBehavior, TruthSpec::triangular(), vec![500, 4000], 200);
                c.points = vec![0.0];
                c.window("median_ratio:value_at_zero@0", Some(0.5), Some(2.0))
                    .window("min:value_at_zero@0", Some(0.0), None)
            }
            "test-calibration" => {
                let mut c = Self::base(name, TestCalibration, TruthSpec::triangular(), vec![2000], 500);
                c.alphas = vec![0.05, 0.2];
                c.alternatives = vec![NamedTruth {
                    name: "uniform".into(),
                    truth: TruthSpec::uniform(),
                }];
                c.window("size:n=2000@0.05", Some(0.02), Some(0.09))
                    .window("size:n=2000@0.2", Some(0.15), Some(0.26))
                    .window("power:uniform:n=2000@0.05", Some(0.95), None)
            }
            "regression-suite" => {
                let truth = TruthSpec::regression_linear_middle(0.25, 0.75, 1.0)?;
                let mut c = Self::base(name, RegressionSuite, truth, vec![2000, 8000], 500);
                c.points = vec![0.5];
                c.sigma = 0.5;
                c.limit_draws = 500;
                c.window("ks:error@0.5", None, Some(0.15))
                    .window("median_spread:error@0.5", None, Some(2.0))
                    .window("max:marshall_excess", None, Some(1e-9))
            }
            "regression-noiseless" => {
                let truth = TruthSpec::regression_linear_middle(0.25, 0.75, 1.0)?;
                let mut c = Self::base(name, RegressionSuite, truth, vec![4000], 10);
                c.points = vec![0.5];
                c.window("max:sup_error", None, Some(1e-3))
                    .window("max:marshall_excess", None, Some(1e-9))
            }
            _ => return input(format!("unknown experiment '{name}'; known: {}", PRESETS.join(", "))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs hold finite values")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return input(format!(
                "config schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.n_grid.is_empty() || self.n_grid[0] < 2 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return input("n grid must be increasing with every entry at least 2");
        }
        if self.replicates < 10 {
            return input("at least 10 replicates are needed");
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return input("delta must lie in (0, 0.5)");
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return input("evaluation points must be finite");
        }
        self.truth.validate()?;
        let need_region = |what: &str| -> Result<[f64; 2]> {
            let Some([a, b]) = self.truth.linear_region else {
                return input(format!("{what} needs a truth with a declared linear region"));
            };
            if self.points.is_empty() {
                return input(format!("{what} needs evaluation points"));
            }
            if self.points.iter().any(|&x| x < a + self.delta || x > b - self.delta) {
                return input(format!(
                    "evaluation points must lie in [{}, {}]",
                    a + self.delta,
                    b - self.delta
                ));
            }
            Ok([a, b])
        };
        match self.kind {
            ExperimentKind::InteriorRate => {
                if !self.truth.is_density() {
                    return Err(Error::Mode("interior-rate experiments need a density truth".into()));
                }
                need_region("interior-rate")?;
                if self.limit_draws > 0 {
                    if self.truth.start() < 0.0 || self.truth.end() > 1.0 {
                        return input("limit draws need a density supported in [0, 1]");
                    }
                    limit_interval(&self.truth, self.limit_grid)?;
                }
            }
            ExperimentKind::BoundaryAdaptation => {
                if self.truth.kind != TruthKind::BoundaryCase {
                    return input("boundary experiments need a boundary-case truth");
                }
                if self.n_grid.len() < 2 {
                    return input("slope fits need at least two sample sizes");
                }
            }
            ExperimentKind::ZeroBehavior => {
                if !self.truth.is_density() {
                    return Err(Error::Mode("zero-behavior experiments need a density truth".into()));
                }
            }
            ExperimentKind::TestCalibration => {
                if !self.truth.is_density() || self.alternatives.iter().any(|a| !a.truth.is_density()) {
                    return Err(Error::Mode("calibration needs density truths".into()));
                }
                if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                    return input("calibration needs levels in (0, 1)");
                }
                if let Some(t) = &self.table {
                    t.validate()?;
                }
            }
            ExperimentKind::RegressionSuite => {
                if self.truth.is_density() {
                    return Err(Error::Mode("the regression suite needs a regression truth".into()));
                }
                need_region("the regression suite")?;
                if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
                    return input("noise level must be finite and nonnegative");
                }
            }
        }
        if self.limit_draws > 0 && self.limit_grid < 16 {
            return input("limit grid needs at least 16 intervals");
        }
        Ok(())
    }
}

/// The truth's linear region as grid indices of a uniform `m`-grid.
fn limit_interval(truth: &TruthSpec, m: usize) -> Result<[f64; 2]> {
    let [a, b] = truth
        .linear_region
        .ok_or_else(|| Error::Input("limit draws need a declared linear region".into()))?;
    for e in [a, b] {
        let k = e * m as f64;
        if (k - k.round()).abs() > 1e-9 {
            return input(format!("linear region end {e} is not on the {m}-grid"));
        }
    }
    Ok([(a * m as f64).round() / m as f64, (b * m as f64).round() / m as f64])
}

/// One per-replicate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub n: usize,
    pub replicate: usize,
    pub quantity: String,
    pub x: Option<f64>,
    pub value: f64,
}

/// Solver outcome for one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub n: usize,
    pub replicate: usize,
    pub sample: String,
    pub converged: bool,
    pub iterations: usize,
    pub knots: usize,
    pub report: CharacterizationReport,
}

/// Median and quartiles of a quantity at one sample size, of the raw values
/// and of their absolute values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub quantity: String,
    pub x: Option<f64>,
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub median_abs: f64,
    pub q1_abs: f64,
    pub q3_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub quantity: String,
    pub x: Option<f64>,
    pub intercept: f64,
    pub slope: f64,
    pub stderr: Option<f64>,
    pub ci: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// `None` when the statistic is undefined (e.g. a ratio with a zero
    /// denominator).
    pub value: Option<f64>,
    pub window: Option<Window>,
    /// Whether the value lies in the window, when one is configured.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub summaries: Vec<Summary>,
    pub slopes: Vec<SlopeFit>,
    pub checks: Vec<Check>,
    pub fits: Vec<FitRecord>,
    /// Per-replicate values; empty unless `keep_records` is set.
    pub records: Vec<Record>,
    /// Values from invelope draws, with `n = 0`.
    pub limit_records: Vec<Record>,
    /// Fits that missed their characterization tolerances.
    pub missed_fits: usize,
    /// Invelope draws whose schedule ran out.
    pub unconverged_limits: usize,
}

impl ExperimentResult {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// True when every windowed check passes.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass != Some(false))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results hold finite values")
    }

    fn header(&self) -> String {
        format!(
            "# experiment={}\n# kind={}\n# seed={}\n# schema_version={}\n",
            self.config.id,
            serde_json::to_string(&self.config.kind).expect("enum").trim_matches('"'),
            self.config.seed,
            self.config.schema_version
        )
    }

    pub fn summary_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("n,quantity,x,count,median,q1,q3,median_abs,q1_abs,q3_abs\n");
        for r in &self.summaries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.quantity,
                opt(r.x),
                r.count,
                r.median,
                r.q1,
                r.q3,
                r.median_abs,
                r.q1_abs,
                r.q3_abs
            );
        }
        s
    }

    pub fn checks_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("name,value,lo,hi,pass\n");
        for c in &self.checks {
            let w = c.window.unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.name,
                opt(c.value),
                opt(w.lo),
                opt(w.hi),
                c.pass.map_or(String::new(), |p| p.to_string())
            );
        }
        s
    }

    pub fn slopes_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("quantity,x,intercept,slope,stderr,ci_lo,ci_hi\n");
        for f in &self.slopes {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                f.quantity,
                opt(f.x),
                f.intercept,
                f.slope,
                opt(f.stderr),
                opt(f.ci.map(|c| c[0])),
                opt(f.ci.map(|c| c[1]))
            );
        }
        s
    }

    pub fn fits_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("n,replicate,sample,converged,iterations,knots,min_gap,knot_equality_error,fubini_residual,df_match_error,marshall_ratio\n");
        for f in &self.fits {
            let d = &f.report;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                f.n,
                f.replicate,
                f.sample,
                f.converged,
                f.iterations,
                f.knots,
                d.min_gap,
                d.knot_equality_error,
                d.fubini_residual,
                d.df_match_error,
                opt(d.marshall_ratio)
            );
        }
        s
    }

    pub fn records_csv(records: &[Record], header: &str) -> String {
        let mut s = header.to_string();
        s.push_str("n,replicate,quantity,x,value\n");
        for r in records {
            let _ = writeln!(s, "{},{},{},{},{}", r.n, r.replicate, r.quantity, opt(r.x), r.value);
        }
        s
    }

    /// Write `result.json` and the CSV tables into `dir`, returning the
    /// files written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = vec![
            ("result.json", self.to_json() + "\n"),
            ("summary.csv", self.summary_csv()),
            ("checks.csv", self.checks_csv()),
            ("fits.csv", self.fits_csv()),
        ];
        if !self.slopes.is_empty() {
            files.push(("slopes.csv", self.slopes_csv()));
        }
        if !self.records.is_empty() {
            files.push(("records.csv", Self::records_csv(&self.records, &self.header())));
        }
        if !self.limit_records.is_empty() {
            files.push(("limit.csv", Self::records_csv(&self.limit_records, &self.header())));
        }
        let mut out = vec![];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            out.push(p);
        }
        Ok(out)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// Run the experiment described by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::InteriorRate => run_interior_rate(cfg),
        ExperimentKind::BoundaryAdaptation => run_boundary_adaptation(cfg),
        ExperimentKind::ZeroBehavior => run_zero_behavior(cfg),
        ExperimentKind::TestCalibration => run_test_calibration(cfg),
        ExperimentKind::RegressionSuite => run_regression_suite(cfg),
    }
}

fn stream(tag: u64, n_index: usize, replicate: usize) -> u64 {
    (tag << 48) | ((n_index as u64) << 32) | replicate as u64
}

type Values = Vec<(String, Option<f64>, f64)>;

/// Fit every replicate of `truth` over the n grid and extract values.
fn replicate_fits<F>(
    cfg: &ExperimentConfig,
    truth: &TruthSpec,
    sample: &str,
    tag: u64,
    extract: F,
) -> Result<(Vec<Record>, Vec<FitRecord>)>
where
    F: Fn(&ConvexFit, &EmpiricalMeasure, usize) -> Result<Values> + Sync,
{
    let tasks: Vec<(usize, usize)> = (0..cfg.n_grid.len())
        .flat_map(|j| (0..cfg.replicates).map(move |r| (j, r)))
        .collect();
    let outs: Vec<Result<(Vec<Record>, FitRecord)>> = tasks
        .par_iter()
        .map(|&(j, r)| {
            let n = cfg.n_grid[j];
            let mut g = rng(cfg.seed, stream(tag, j, r));
            let data = if truth.is_density() {
                sample_density_with(truth, n, &mut g)?
            } else {
                simulate_regression_with(truth, n, cfg.sigma, &mut g)?
            };
            let res = if truth.is_density() {
                fit_convex_density(&data, &cfg.solver)
            } else {
                fit_convex_regression(&data, &cfg.solver)
            };
            let (fit, converged) = match res {
                Ok(f) => (f, true),
                Err(Error::Convergence { best, .. }) => (*best, false),
                Err(e) => return Err(e),
            };
            let values = extract(&fit, &data, n)?;
            let records = values
                .into_iter()
                .map(|(quantity, x, value)| Record {
                    n,
                    replicate: r,
                    quantity,
                    x,
                    value,
                })
                .collect();
            let fr = FitRecord {
                n,
                replicate: r,
                sample: sample.to_string(),
                converged,
                iterations: fit.iterations,
                knots: fit.knots.len(),
                report: fit.diagnostics,
            };
            Ok((records, fr))
        })
        .collect();
    let mut records = vec![];
    let mut fits = vec![];
    for o in outs {
        let (r, f) = o?;
        records.extend(r);
        fits.push(f);
    }
    Ok((records, fits))
}

/// Values from `cfg.limit_draws` invelope draws.
fn limit_values<F>(cfg: &ExperimentConfig, kind: PathKind, interval: [f64; 2], extract: F) -> Result<(Vec<Record>, usize)>
where
    F: Fn(&InvelopeResult) -> Result<Values> + Sync,
{
    let time_change = match kind {
        PathKind::Bridge => Some(&cfg.truth),
        PathKind::Motion => None,
    };
    let outs: Vec<Result<(Vec<Record>, bool)>> = (0..cfg.limit_draws)
        .into_par_iter()
        .map(|i| {
            let mut g = rng(cfg.seed, stream(TAG_LIMIT, 0, i));
            let path = gaussian_path_with(cfg.limit_grid, kind, time_change, &mut g)?;
            let (inv, ok) = match compute_invelope(&path, interval, &cfg.invelope) {
                Ok(inv) => (inv, true),
                Err(Error::InvelopeSchedule { last, .. }) => (*last, false),
                Err(e) => return Err(e),
            };
            let recs = extract(&inv)?
                .into_iter()
                .map(|(quantity, x, value)| Record {
                    n: 0,
                    replicate: i,
                    quantity,
                    x,
                    value,
                })
                .collect();
            Ok((recs, ok))
        })
        .collect();
    let mut records = vec![];
    let mut unconverged = 0;
    for o in outs {
        let (r, ok) = o?;
        records.extend(r);
        unconverged += usize::from(!ok);
    }
    Ok((records, unconverged))
}

fn key(quantity: &str, x: Option<f64>) -> String {
    match x {
        Some(x) => format!("{quantity}@{x}"),
        None => quantity.to_string(),
    }
}

fn select<'a>(records: &'a [Record], n: Option<usize>, quantity: &str, x: Option<f64>) -> Vec<f64> {
    records
        .iter()
        .filter(|r| n.map_or(true, |n| r.n == n) && r.quantity == quantity && r.x == x)
        .map(|r| r.value)
        .collect()
}

/// Distinct `(quantity, x)` pairs in first-seen order.
fn series(records: &[Record]) -> Vec<(String, Option<f64>)> {
    let mut out: Vec<(String, Option<f64>)> = vec![];
    for r in records {
        if !out.iter().any(|(q, x)| *q == r.quantity && *x == r.x) {
            out.push((r.quantity.clone(), r.x));
        }
    }
    out
}

/// Per-(n, quantity, x) summaries, recomputable from the records.
pub fn summarize(records: &[Record], n_grid: &[usize]) -> Vec<Summary> {
    let mut out = vec![];
    for (quantity, x) in series(records) {
        for &n in n_grid {
            let v = select(records, Some(n), &quantity, x);
            if v.is_empty() {
                continue;
            }
            let a: Vec<f64> = v.iter().map(|t| t.abs()).collect();
            let (q1, median, q3) = quartiles(&v);
            let (q1_abs, median_abs, q3_abs) = quartiles(&a);
            out.push(Summary {
                n,
                quantity: quantity.clone(),
                x,
                count: v.len(),
                median,
                q1,
                q3,
                median_abs,
                q1_abs,
                q3_abs,
            });
        }
    }
    out
}

struct Builder<'a> {
    cfg: &'a ExperimentConfig,
    records: Vec<Record>,
    fits: Vec<FitRecord>,
    limit_records: Vec<Record>,
    unconverged_limits: usize,
    checks: Vec<Check>,
    slopes: Vec<SlopeFit>,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Self {
            cfg,
            records: vec![],
            fits: vec![],
            limit_records: vec![],
            unconverged_limits: 0,
            checks: vec![],
            slopes: vec![],
        }
    }

    fn add(&mut self, (records, fits): (Vec<Record>, Vec<FitRecord>)) {
        self.records.extend(records);
        self.fits.extend(fits);
    }

    fn check(&mut self, name: String, value: f64) {
        let value = value.is_finite().then_some(value);
        let window = self.cfg.windows.get(&name).copied();
        let pass = window.map(|w| value.is_some_and(|v| w.contains(v)));
        self.checks.push(Check {
            name,
            value,
            window,
            pass,
        });
    }

    /// Per-n `p`-quantiles of `|value|`.
    fn quantiles_abs(&self, quantity: &str, x: Option<f64>, p: f64) -> Vec<f64> {
        self.cfg
            .n_grid
            .iter()
            .map(|&n| {
                let mut v: Vec<f64> = select(&self.records, Some(n), quantity, x).iter().map(|t| t.abs()).collect();
                v.sort_by(f64::total_cmp);
                quantile_sorted(&v, p)
            })
            .collect()
    }

    /// `max / min` over n of the `p`-quantile of `|value|`; 1 when all are 0.
    fn spread(&mut self, stat: &str, quantity: &str, x: Option<f64>, p: f64) {
        let m = self.quantiles_abs(quantity, x, p);
        let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
        let v = if hi == 0.0 { 1.0 } else { hi / lo };
        self.check(format!("{stat}:{}", key(quantity, x)), v);
    }

    /// Largest per-n `p`-quantile of `|value|` over that at the smallest n;
    /// 1 when all are 0.
    fn growth(&mut self, stat: &str, quantity: &str, x: Option<f64>, p: f64) {
        let m = self.quantiles_abs(quantity, x, p);
        let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let v = if hi == 0.0 { 1.0 } else { hi / m[0] };
        self.check(format!("{stat}:{}", key(quantity, x)), v);
    }

    fn median_spread(&mut self, quantity: &str, x: Option<f64>) {
        self.spread("median_spread", quantity, x, 0.5);
    }

    /// Median of `|value|` at the largest n over that at the smallest.
    fn median_ratio(&mut self, quantity: &str, x: Option<f64>) {
        let m = self.quantiles_abs(quantity, x, 0.5);
        self.check(format!("median_ratio:{}", key(quantity, x)), m[m.len() - 1] / m[0]);
    }

    fn extreme(&mut self, quantity: &str, x: Option<f64>, max: bool) {
        let v = select(&self.records, None, quantity, x);
        let e = if max {
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            v.iter().copied().fold(f64::INFINITY, f64::min)
        };
        let stat = if max { "max" } else { "min" };
        self.check(format!("{stat}:{}", key(quantity, x)), e);
    }

    fn slope(&mut self, quantity: &str, x: Option<f64>) {
        let groups: Vec<Vec<f64>> = self
            .cfg
            .n_grid
            .iter()
            .map(|&n| select(&self.records, Some(n), quantity, x))
            .collect();
        let mut g = rng(self.cfg.seed, stream(TAG_BOOT, 0, 0));
        let s = log_log_slope(&self.cfg.n_grid, &groups, 200, &mut g);
        self.slopes.push(SlopeFit {
            quantity: quantity.to_string(),
            x,
            intercept: s.intercept,
            slope: s.slope,
            stderr: s.stderr.is_finite().then_some(s.stderr),
            ci: s.ci[0].is_finite().then_some(s.ci),
        });
        self.check(format!("slope:{}", key(quantity, x)), s.slope);
    }

    /// KS distance between the values at the largest n and the limit draws.
    fn ks(&mut self, stat: &str, quantity: &str, limit_quantity: &str, x: Option<f64>) {
        let n = *self.cfg.n_grid.last().expect("nonempty grid");
        let a = select(&self.records, Some(n), quantity, x);
        let b = select(&self.limit_records, None, limit_quantity, x);
        self.check(format!("{stat}:{}", key(quantity, x)), ks_distance(&a, &b));
    }

    fn finish(self) -> Result<ExperimentResult> {
        let missed = self.fits.iter().filter(|f| !f.converged).count();
        if missed * 100 > self.fits.len() {
            return Err(Error::Experiment(format!(
                "{missed} of {} fits missed their characterization tolerances",
                self.fits.len()
            )));
        }
        let summaries = summarize(&self.records, &self.cfg.n_grid);
        Ok(ExperimentResult {
            config: self.cfg.clone(),
            summaries,
            slopes: self.slopes,
            checks: self.checks,
            fits: self.fits,
            records: if self.cfg.keep_records { self.records } else { vec![] },
            limit_records: self.limit_records,
            missed_fits: missed,
            unconverged_limits: self.unconverged_limits,
        })
    }
}

fn right_slope(fit: &ConvexFit, x: f64) -> Result<f64> {
    fit.estimate.derivative_right(x)
}

/// √n-scaled pointwise errors of the estimate and its right derivative on a
/// linear region of a density, with optional comparison against invelope
/// draws of `H''` and `H'''`.
pub fn run_interior_rate(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut b = Builder::new(cfg);
    let truth = &cfg.truth;
    b.add(replicate_fits(cfg, truth, "truth", 0, |fit, _, n| {
        let s = (n as f64).sqrt();
        let mut v = vec![];
        for &x in &cfg.points {
            v.push(("error".into(), Some(x), s * (fit.estimate.eval(x) - truth.eval(x))));
            v.push((
                "derivative_error".into(),
                Some(x),
                s * (right_slope(fit, x)? - truth.derivative(x)),
            ));
        }
        Ok(v)
    })?);
    if cfg.limit_draws > 0 {
        let interval = limit_interval(truth, cfg.limit_grid)?;
        let (recs, unconverged) = limit_values(cfg, PathKind::Bridge, interval, |inv| {
            let mut v = vec![];
            for &x in &cfg.points {
                v.push(("error".into(), Some(x), inv.second_derivative_at(x)?));
                v.push(("derivative_error".into(), Some(x), inv.third_derivative_at(x)?));
            }
            Ok(v)
        })?;
        b.limit_records = recs;
        b.unconverged_limits = unconverged;
    }
    for &x in &cfg.points {
        for q in ["error", "derivative_error"] {
            if cfg.n_grid.len() > 1 {
                b.median_spread(q, Some(x));
            }
            if cfg.limit_draws > 0 {
                b.ks("ks", q, q, Some(x));
            }
        }
    }
    b.finish()
}

/// Error at a boundary point of the linear region: log-log slope of the
/// median absolute error, and the √n-scaled negative part.
pub fn run_boundary_adaptation(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut b = Builder::new(cfg);
    let truth = &cfg.truth;
    let points = if cfg.points.is_empty() {
        vec![truth.boundary.expect("validated boundary truth").x0]
    } else {
        cfg.points.clone()
    };
    b.add(replicate_fits(cfg, truth, "truth", 0, |fit, _, n| {
        let s = (n as f64).sqrt();
        let mut v = vec![];
        for &x in &points {
            let d = fit.estimate.eval(x) - truth.eval(x);
            v.push(("abs_error".into(), Some(x), d.abs()));
            v.push(("negative_part".into(), Some(x), s * d.min(0.0)));
        }
        Ok(v)
    })?);
    for &x in &points {
        b.slope("abs_error", Some(x));
        // The estimate mostly sits above the truth at a boundary point, so
        // the median negative part is 0 and its tail thins out with n; only
        // growth of the upper tail is checked.
        b.growth("q90_growth", "negative_part", Some(x), 0.9);
    }
    b.finish()
}

/// Distribution of the density estimate at zero across sample sizes.
pub fn run_zero_behavior(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut b = Builder::new(cfg);
    b.add(replicate_fits(cfg, &cfg.truth, "truth", 0, |fit, _, _| {
        Ok(vec![("value_at_zero".into(), Some(0.0), fit.estimate.eval(0.0))])
    })?);
    b.median_ratio("value_at_zero", Some(0.0));
    b.extreme("value_at_zero", Some(0.0), false);
    b.finish()
}

/// Rejection rates of the linearity test under the null truth and under
/// each alternative.
pub fn run_test_calibration(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut b = Builder::new(cfg);
    let table = cfg.table.clone().unwrap_or_else(QuantileTable::shipped);
    for &a in &cfg.alphas {
        table.t_alpha(a)?;
    }
    let stat = |fit: &ConvexFit, _: &EmpiricalMeasure, n: usize| -> Result<Values> {
        Ok(vec![("t_n".into(), None, statistic_of_estimate(&fit.estimate, n))])
    };
    let mut samples = vec![("null".to_string(), cfg.truth.clone())];
    samples.extend(cfg.alternatives.iter().map(|a| (a.name.clone(), a.truth.clone())));
    for (i, (name, truth)) in samples.iter().enumerate() {
        let (mut recs, fits) = replicate_fits(cfg, truth, name, i as u64, stat)?;
        if i > 0 {
            for r in &mut recs {
                r.quantity = format!("t_n:{name}");
            }
        }
        b.add((recs, fits));
    }
    for (i, (name, _)) in samples.iter().enumerate() {
        let quantity = if i == 0 { "t_n".to_string() } else { format!("t_n:{name}") };
        for &n in &cfg.n_grid {
            let t = select(&b.records, Some(n), &quantity, None);
            for &a in &cfg.alphas {
                let mut rejected = 0usize;
                for &v in &t {
                    rejected += usize::from(decide(v, n, a, &table)?.reject);
                }
                let rate = rejected as f64 / t.len() as f64;
                let label = if i == 0 { "size".to_string() } else { format!("power:{name}") };
                b.check(format!("{label}:n={n}@{a}"), rate);
            }
        }
    }
    b.finish()
}

/// Pointwise errors, Marshall inequality and sup error on the linear region
/// of a regression function, with optional comparison against rescaled
/// invelope draws of Brownian motion.
pub fn run_regression_suite(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut b = Builder::new(cfg);
    let truth = &cfg.truth;
    let [a, bb] = truth.linear_region.expect("validated linear region");
    let (lo, hi) = (a + cfg.delta, bb - cfg.delta);
    b.add(replicate_fits(cfg, truth, "truth", 0, |fit, data, n| {
        let s = (n as f64).sqrt();
        let mut v = vec![];
        for &x in &cfg.points {
            v.push(("error".into(), Some(x), s * (fit.estimate.eval(x) - truth.eval(x))));
            v.push((
                "derivative_error".into(),
                Some(x),
                s * (right_slope(fit, x)? - truth.derivative(x)),
            ));
        }
        // The truth is linear on [lo, hi], so the difference is piecewise
        // linear there.
        let sup = fit
            .estimate
            .breakpoints()
            .iter()
            .copied()
            .filter(|&t| t > lo && t < hi)
            .chain([lo, hi])
            .map(|t| (fit.estimate.eval(t) - truth.eval(t)).abs())
            .fold(0.0, f64::max);
        v.push(("sup_error".into(), None, sup));
        let rep = characterization_report(fit, data, Some(truth))?;
        let [num, den] = rep
            .marshall_distances
            .ok_or_else(|| Error::Input("regression truth has no polynomial integral".into()))?;
        v.push(("marshall_excess".into(), None, num - 2.0 * den));
        Ok(v)
    })?);
    // Limit draws both through `rescale_regression_limit` and directly as
    // the invelope of `sigma W` restricted to the linear region.
    let direct = cfg.limit_draws > 0 && limit_interval(truth, cfg.limit_grid).is_ok();
    if cfg.limit_draws > 0 {
        let (recs, unconverged) = limit_values(cfg, PathKind::Motion, [0.0, 1.0], |inv| {
            let mut v = vec![];
            for &x in &cfg.points {
                let (d2, d3) = rescale_regression_limit(inv, a, bb, cfg.sigma, x)?;
                v.push(("error".into(), Some(x), d2));
                v.push(("derivative_error".into(), Some(x), d3));
            }
            Ok(v)
        })?;
        b.limit_records = recs;
        b.unconverged_limits = unconverged;
    }
    if direct {
        let interval = limit_interval(truth, cfg.limit_grid)?;
        let (recs, unconverged) = limit_values(cfg, PathKind::Motion, interval, |inv| {
            let mut v = vec![];
            for &x in &cfg.points {
                v.push(("error_direct".into(), Some(x), cfg.sigma * inv.second_derivative_at(x)?));
                v.push((
                    "derivative_error_direct".into(),
                    Some(x),
                    cfg.sigma * inv.third_derivative_at(x)?,
                ));
            }
            Ok(v)
        })?;
        b.limit_records.extend(recs);
        b.unconverged_limits += unconverged;
    }
    for &x in &cfg.points {
        for q in ["error", "derivative_error"] {
            if cfg.n_grid.len() > 1 {
                b.median_spread(q, Some(x));
            }
            if cfg.limit_draws > 0 {
                b.ks("ks", q, q, Some(x));
            }
            if direct {
                b.ks("ks_direct", q, &format!("{q}_direct"), Some(x));
            }
        }
    }
    b.extreme("sup_error", None, true);
    b.extreme("marshall_excess", None, true);
    b.finish()
}
