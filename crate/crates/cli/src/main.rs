use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use convex_lse::estimator::{
    characterization_report, fit_convex_density, fit_convex_regression, ConvexFit, EmpiricalMeasure, SolverOptions,
};
use convex_lse::experiments::{run_experiment, ExperimentConfig, PRESETS};
use convex_lse::invelope::{compute_invelope, estimate_quantiles_with, limit_T, InvelopeOptions, TimeChange};
use convex_lse::lintest::{linearity_test, QuantileTable};
use convex_lse::stochastic::{gaussian_path, sample_pwl_density, simulate_regression, PathKind, TruthSpec};

#[derive(Parser)]
#[command(name = "convex-lse", version, about = "Convex least squares estimation, invelope simulation and the linearity test")]
struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (or directory for `experiment`); standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON configuration (experiment config for `experiment`, invelope
    /// options for `simulate-invelope` and `make-quantile-table`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the convex LSE of a density to a one-column CSV of observations.
    FitDensity(FitArgs),
    /// Fit the convex regression LSE to a CSV with columns `x,y` (or `y`
    /// alone on the design i/(n+1)).
    FitRegression(FitArgs),
    /// Simulate one invelope path and write its grid functions as CSV.
    SimulateInvelope {
        /// Grid intervals.
        #[arg(long, default_value_t = 800)]
        m: usize,
        #[arg(long, value_enum, default_value_t = PathArg::Bridge)]
        kind: PathArg,
        /// Interval `a,b` (grid points of [0, 1]).
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.0, 1.0])]
        interval: Vec<f64>,
    },
    /// Monte Carlo upper quantiles of the limit statistic T, as JSON.
    MakeQuantileTable {
        #[arg(long, default_value_t = 20000)]
        n_sims: usize,
        #[arg(long, default_value_t = 800)]
        m: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.025, 0.05, 0.1, 0.2])]
        alphas: Vec<f64>,
        #[arg(long, value_enum, default_value_t = TimeChangeArg::Standard)]
        time_change: TimeChangeArg,
    },
    /// Test the triangular null against convex decreasing alternatives;
    /// prints a JSON decision.
    TestLinearity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Quantile table JSON (the shipped table when absent).
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Draw a sample from a built-in truth as CSV.
    Sample {
        #[arg(long, value_enum)]
        truth: TruthArg,
        #[arg(long)]
        n: usize,
        /// Noise level for regression truths.
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
    },
    /// Run a simulation study and write its tables into `--out`.
    Experiment {
        /// Preset name; optional when `--config` is given.
        id: Option<String>,
        /// Print the configuration that would run, then exit.
        #[arg(long)]
        print_config: bool,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Write `x,estimate` on this many grid points as CSV instead of JSON.
    #[arg(long)]
    grid: Option<usize>,
    /// Truth for the Marshall ratio and the CSV truth column.
    #[arg(long, value_enum)]
    truth: Option<TruthArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Bridge,
    Motion,
}

#[derive(Clone, Copy, ValueEnum)]
enum TimeChangeArg {
    Standard,
    Triangular,
}

#[derive(Clone, Copy, ValueEnum)]
enum TruthArg {
    Triangular,
    Uniform,
    CaseA,
    CaseB,
    CaseC,
    RegressionLinear,
    RegressionSquare,
    RegressionLinearMiddle,
}

impl TruthArg {
    fn spec(self) -> Result<TruthSpec> {
        Ok(match self {
            TruthArg::Triangular => TruthSpec::triangular(),
            TruthArg::Uniform => TruthSpec::uniform(),
            TruthArg::CaseA => TruthSpec::case_a(),
            TruthArg::CaseB => TruthSpec::case_b(2.0)?,
            TruthArg::CaseC => TruthSpec::case_c(2.0)?,
            TruthArg::RegressionLinear => TruthSpec::regression_linear(0.0, 1.0),
            TruthArg::RegressionSquare => TruthSpec::regression_square(),
            TruthArg::RegressionLinearMiddle => TruthSpec::regression_linear_middle(0.25, 0.75, 1.0)?,
        })
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring worker threads")?;
    }
    let seed = cli.seed.unwrap_or(1);
    match &cli.command {
        Command::FitDensity(a) => fit(&cli, a, true),
        Command::FitRegression(a) => fit(&cli, a, false),
        Command::SimulateInvelope { m, kind, interval } => {
            let opts = invelope_options(cli.config.as_deref())?;
            let kind = match kind {
                PathArg::Bridge => PathKind::Bridge,
                PathArg::Motion => PathKind::Motion,
            };
            let truth = TruthSpec::triangular();
            let path = gaussian_path(*m, kind, Some(&truth), seed)?;
            let interval = [interval[0], interval[1]];
            let (inv, converged) = match compute_invelope(&path, interval, &opts) {
                Ok(inv) => (inv, true),
                Err(convex_lse::Error::InvelopeSchedule { last, k }) => {
                    eprintln!("warning: k schedule exhausted at k = {k}; writing the last iterate");
                    (*last, false)
                }
                Err(e) => return Err(e.into()),
            };
            let r = &inv.residuals;
            let header = [
                ("seed", seed.to_string()),
                ("m", m.to_string()),
                ("kind", format!("{kind:?}").to_lowercase()),
                ("k_final", inv.k_final.to_string()),
                ("converged", converged.to_string()),
                ("T", limit_T(&inv).to_string()),
                ("min_gap", r.min_gap.to_string()),
                ("fubini", r.fubini.to_string()),
                ("start_slope_residual", r.start_slope.to_string()),
                ("end_slope_residual", r.end_slope.to_string()),
            ];
            emit(cli.out.as_deref(), &inv.to_csv(&path, &header))
        }
        Command::MakeQuantileTable {
            n_sims,
            m,
            alphas,
            time_change,
        } => {
            let opts = invelope_options(cli.config.as_deref())?;
            let tc = match time_change {
                TimeChangeArg::Standard => TimeChange::Standard,
                TimeChangeArg::Triangular => TimeChange::Triangular,
            };
            let table = estimate_quantiles_with(*n_sims, alphas, *m, tc, &opts, seed)?;
            if table.unconverged > 0 {
                eprintln!("warning: {} draws exhausted the k schedule", table.unconverged);
            }
            emit(cli.out.as_deref(), &(table.to_json() + "\n"))
        }
        Command::TestLinearity { data, alpha, table } => {
            let sample = EmpiricalMeasure::density(read_columns(data)?.remove(0))?;
            let table = match table {
                Some(p) => QuantileTable::from_json(&read(p)?)?,
                None => QuantileTable::shipped(),
            };
            let d = linearity_test(&sample, *alpha, &table)?;
            emit(cli.out.as_deref(), &(serde_json::to_string_pretty(&d)? + "\n"))
        }
        Command::Sample { truth, n, sigma } => {
            let t = truth.spec()?;
            let header = [("seed", seed.to_string()), ("n", n.to_string())];
            let s = if t.is_density() {
                sample_pwl_density(&t, *n, seed)?
            } else {
                simulate_regression(&t, *n, *sigma, seed)?
            };
            let mut header = header.to_vec();
            if !t.is_density() {
                header.push(("sigma", sigma.to_string()));
            }
            emit(cli.out.as_deref(), &s.to_csv(&header))
        }
        Command::Experiment { id, print_config } => {
            let mut cfg = match (&cli.config, id) {
                (Some(p), _) => ExperimentConfig::from_json(&read(p)?)?,
                (None, Some(id)) => ExperimentConfig::preset(id)?,
                (None, None) => bail!("give an experiment id ({}) or --config", PRESETS.join(", ")),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if *print_config {
                println!("{}", cfg.to_json());
                return Ok(());
            }
            let dir = cli
                .out
                .clone()
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("results").join(&cfg.id));
            let result = run_experiment(&cfg)?;
            let files = result.write(&dir)?;
            for c in &result.checks {
                let status = match c.pass {
                    Some(true) => "PASS",
                    Some(false) => "FAIL",
                    None => "info",
                };
                let v = c.value.map_or("undefined".to_string(), |v| format!("{v:.6}"));
                println!("[{status}] {} = {v}", c.name);
            }
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            if !result.passed() {
                bail!("some checks fell outside their windows");
            }
            Ok(())
        }
    }
}

fn fit(cli: &Cli, a: &FitArgs, density: bool) -> Result<()> {
    let cols = read_columns(&a.data)?;
    let data = if density {
        EmpiricalMeasure::density(cols[0].clone())?
    } else if cols.len() >= 2 {
        EmpiricalMeasure::regression(cols[0].clone(), cols[1].clone())?
    } else {
        EmpiricalMeasure::regression_fixed_design(cols[0].clone())?
    };
    let opts = SolverOptions {
        tol: a.tol,
        ..SolverOptions::default()
    };
    let res = if density {
        fit_convex_density(&data, &opts)
    } else {
        fit_convex_regression(&data, &opts)
    };
    let mut fit: ConvexFit = res?;
    let truth = a.truth.map(TruthArg::spec).transpose()?;
    if let Some(t) = &truth {
        fit.diagnostics = characterization_report(&fit, &data, Some(t))?;
    }
    let body = match a.grid {
        Some(k) if k >= 2 => {
            let hi = if density {
                fit.estimate.last().max(data.max_point())
            } else {
                1.0
            };
            let grid: Vec<f64> = (0..k).map(|i| hi * i as f64 / (k - 1) as f64).collect();
            fit.to_csv(&grid, truth.as_ref(), &[("n", data.n().to_string())])
        }
        Some(_) => bail!("--grid needs at least 2 points"),
        None => fit.to_json() + "\n",
    };
    emit(cli.out.as_deref(), &body)
}

fn invelope_options(config: Option<&Path>) -> Result<InvelopeOptions> {
    let opts = match config {
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => InvelopeOptions::default(),
    };
    Ok(opts)
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

/// Numeric columns of a CSV file; a first row that does not parse is taken
/// as a header and `#` lines are comments.
fn read_columns(p: &Path) -> Result<Vec<Vec<f64>>> {
    let text = read(p)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut cols: Vec<Vec<f64>> = vec![];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("reading {}", p.display()))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if i == 0 => continue,
            Err(e) => bail!("{}: row {}: {e}", p.display(), i + 1),
        };
        if cols.is_empty() {
            cols = vec![vec![]; row.len()];
        }
        if row.len() != cols.len() {
            bail!("{}: row {} has {} fields, expected {}", p.display(), i + 1, row.len(), cols.len());
        }
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
    }
    if cols.is_empty() || cols[0].is_empty() {
        bail!("{} holds no numeric rows", p.display());
    }
    Ok(cols)
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, body).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}
