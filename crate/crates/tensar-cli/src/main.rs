//! Command-line surface: fitting, forecasting, simulation experiments,
//! hyperparameter selection, and CSV import.
//!
//! Every randomized command takes an explicit `--seed`; there is no
//! wall-clock seeding. Failures exit nonzero with a machine-readable JSON
//! object (`{code, message, context}`) on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tensar::als::{als_fit, AlsConfig, EstimVariant};
use tensar::io::{
    read_model, read_series, read_series_csv, read_simulate_config, write_metrics, write_model,
    write_rate_csv, write_scores_csv, write_series, MetricsFile, ModelFile, ModelMetadata,
};
use tensar::lrs::{lrs_fit, LrsConfig};
use tensar::selection::{
    forecast_metrics, holdout_select, EstimatorKind, ForecastReport, HoldoutPlan,
};
use tensar::sim::{gen_stationary_dgp, simulate_series, RateExperiment};
use tensar::model::TensorSeries;

#[derive(Parser)]
#[command(
    name = "tensar",
    about = "CP-based low-rank (plus sparse) autoregression for tensor-valued time series",
    version
)]
struct Cli {
    /// Worker threads for restarts, grid cells, and replications
    /// (default: TENSAR_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    /// CP low-rank with loadings shared across lags.
    Lowrank,
    /// Low-rank plus entrywise-sparse coefficient.
    Lrs,
    /// Lag index treated as an extra covariate mode.
    Stacked,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DesignArg {
    VaryT,
    VaryRanks,
    VaryDims,
    VaryAlpha,
}

#[derive(Args)]
struct AlsFlags {
    /// Number of random initializations.
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// Relative loss-change stopping threshold.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Maximum ALS cycles per fit.
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
}

impl AlsFlags {
    fn config(&self, seed: u64) -> AlsConfig {
        AlsConfig {
            max_iters: self.max_iters,
            rel_tol: self.tol,
            num_restarts: self.restarts,
            rng_seed: seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a series and write the model document.
    Fit {
        /// Input series (TSERIES1 binary).
        #[arg(long)]
        input: PathBuf,
        /// Output model document (JSON).
        #[arg(long)]
        output: PathBuf,
        /// Fit report JSON (default: <output>.report.json).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Autoregressive order.
        #[arg(short = 'P', long = "order")]
        order: usize,
        #[arg(long)]
        rank_y: usize,
        #[arg(long)]
        rank_x: usize,
        #[arg(long, value_enum, default_value = "lowrank")]
        variant: VariantArg,
        /// Sparse penalty strength (lrs variant).
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        /// Radius of non-identifiability (lrs variant; default P^(1/2)·Q).
        #[arg(long)]
        alpha_l: Option<f64>,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        als: AlsFlags,
    },
    /// One-step-ahead predictions from a fitted model over a window.
    Forecast {
        /// Model document written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Input series (TSERIES1 binary).
        #[arg(long)]
        input: PathBuf,
        /// Output predictions (TSERIES1 binary).
        #[arg(long)]
        output: PathBuf,
        /// Metrics JSON (default: <output>.metrics.json).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// First predicted time index, 1-based (default: order + 1).
        #[arg(long)]
        start: Option<usize>,
    },
    /// Simulate a series from a DGP config, or run a rate experiment.
    Simulate {
        /// DGP config (TOML).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output series path (series mode).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Experiment design override.
        #[arg(long, value_enum)]
        design: Option<DesignArg>,
        /// Comma-separated design values (with --design).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Replications override.
        #[arg(long)]
        replications: Option<usize>,
        /// Estimator for experiments.
        #[arg(long, value_enum, default_value = "lowrank")]
        estimator: VariantArg,
        /// Per-cell summary CSV (experiment mode).
        #[arg(long)]
        summary_csv: Option<PathBuf>,
        /// Per-replication CSV (experiment mode).
        #[arg(long)]
        reps_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        #[command(flatten)]
        als: AlsFlags,
    },
    /// Hold-out hyperparameter selection over a grid.
    Select {
        #[arg(long)]
        input: PathBuf,
        /// Score table CSV.
        #[arg(long)]
        output: PathBuf,
        /// Chosen configuration JSON (default: <output>.chosen.json).
        #[arg(long)]
        chosen: Option<PathBuf>,
        #[arg(long)]
        train_len: usize,
        #[arg(long)]
        val_len: usize,
        #[arg(long, default_value_t = 12)]
        grid_pmax: usize,
        #[arg(long, default_value_t = 12)]
        grid_rymax: usize,
        #[arg(long, default_value_t = 12)]
        grid_rxmax: usize,
        #[arg(long, value_enum, default_value = "lowrank")]
        variant: VariantArg,
        /// Penalty candidates (lrs variant; default: the built-in grid).
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
        /// Search the full (order, ranks, lambda) product instead of
        /// reusing the low-rank ranks.
        #[arg(long, default_value_t = false)]
        joint_lambda: bool,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        als: AlsFlags,
    },
    /// Convert a CSV (one row per step, vectorized entries) to TSERIES1.
    ImportCsv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Tensor dimensions, e.g. 4,4,7.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        #[arg(long, default_value_t = false)]
        has_header: bool,
    },
}

struct CliError {
    code: &'static str,
    message: String,
    context: serde_json::Value,
}

impl CliError {
    fn new(code: &'static str, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
            context: json!({}),
        }
    }

    fn with_context(mut self, context: serde_json::Value) -> Self {
        self.context = context;
        self
    }
}

impl From<tensar::io::IoError> for CliError {
    fn from(e: tensar::io::IoError) -> Self {
        use tensar::io::IoError::*;
        let code = match &e {
            BadMagic => "bad_magic",
            Truncated { .. } => "truncated",
            DimOverflow => "dim_overflow",
            EmptySeries => "empty_series",
            BadModel(_) => "bad_model",
            BadConfig(_) => "bad_config",
            BadCsv(_) => "bad_csv",
            Io(_) => "io",
            Model(_) | Tensor(_) => "format",
        };
        CliError::new(code, e)
    }
}

impl From<tensar::als::FitError> for CliError {
    fn from(e: tensar::als::FitError) -> Self {
        CliError::new("fit", e)
    }
}

impl From<tensar::SimError> for CliError {
    fn from(e: tensar::SimError) -> Self {
        CliError::new("simulate", e)
    }
}

impl From<tensar::SelectError> for CliError {
    fn from(e: tensar::SelectError) -> Self {
        CliError::new("select", e)
    }
}

impl From<tensar::ModelError> for CliError {
    fn from(e: tensar::ModelError) -> Self {
        CliError::new("model", e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("TENSAR_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = json!({
                "code": e.code,
                "message": e.message,
                "context": e.context,
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit {
            input,
            output,
            report,
            order,
            rank_y,
            rank_x,
            variant,
            lambda,
            alpha_l,
            seed,
            als,
        } => {
            let series = read_series(&input)?;
            let als_config = als.config(seed);
            let config_echo = json!({
                "order": order, "rank_y": rank_y, "rank_x": rank_x,
                "restarts": als.restarts, "tol": als.tol,
                "max_iters": als.max_iters, "lambda": lambda,
            });
            let (model, fit_report) = match variant {
                VariantArg::Lowrank | VariantArg::Stacked => {
                    let estim = if variant == VariantArg::Lowrank {
                        EstimVariant::SharedLags
                    } else {
                        EstimVariant::Stacked
                    };
                    let (coef, rep) = als_fit(&series, order, rank_y, rank_x, &als_config, estim)?;
                    let meta = ModelMetadata {
                        final_loss: Some(rep.final_loss),
                        rng_seed: Some(seed),
                        config: Some(config_echo),
                        report: Some(rep.clone()),
                    };
                    (ModelFile::from_parts(&coef, None, meta), rep)
                }
                VariantArg::Lrs => {
                    let config = LrsConfig {
                        lambda,
                        alpha_l,
                        als: als_config,
                        ..LrsConfig::default()
                    };
                    let (coef, sparse, rep) = lrs_fit(&series, order, rank_y, rank_x, &config)?;
                    let meta = ModelMetadata {
                        final_loss: Some(rep.final_loss),
                        rng_seed: Some(seed),
                        config: Some(config_echo),
                        report: Some(rep.clone()),
                    };
                    (ModelFile::from_parts(&coef, Some(&sparse), meta), rep)
                }
            };
            write_model(&model, &output)?;
            let report_path =
                report.unwrap_or_else(|| with_suffix(&output, ".report.json"));
            let text = serde_json::to_string_pretty(&fit_report)
                .map_err(|e| CliError::new("report", e))?;
            std::fs::write(&report_path, text).map_err(|e| {
                CliError::from(tensar::io::IoError::from(e))
                    .with_context(json!({"path": report_path.display().to_string()}))
            })?;
            Ok(())
        }
        Command::Forecast {
            model,
            input,
            output,
            metrics,
            start,
        } => {
            let doc = read_model(&model)?;
            let (coef, sparse) = doc.into_parts()?;
            let series = read_series(&input)?;
            let p = coef.lag_order();
            let first_target = start.unwrap_or(p + 1);
            if first_target <= p || first_target > series.len() {
                return Err(CliError::new(
                    "usage",
                    format!(
                        "start must lie in [{}, {}], got {first_target}",
                        p + 1,
                        series.len()
                    ),
                ));
            }
            let mut preds = Vec::new();
            for t in first_target..=series.len() {
                let lags = series
                    .lag_window(t - 1, p)
                    .ok_or_else(|| CliError::new("usage", "window out of range"))?;
                preds.push(coef.predict_one_step(&lags, sparse.as_ref())?);
            }
            let predictions = TensorSeries::new(preds)?;
            let actual = TensorSeries::new(
                series.observations()[first_target - 1..].to_vec(),
            )?;
            let (msfe, mafe) = forecast_metrics(&predictions, &actual)?;
            write_series(&predictions, &output)?;
            let report = ForecastReport {
                predictions,
                first_target: first_target - 1,
                msfe,
                mafe,
            };
            let metrics_path =
                metrics.unwrap_or_else(|| with_suffix(&output, ".metrics.json"));
            write_metrics(&MetricsFile::new(&report), &metrics_path)?;
            Ok(())
        }
        Command::Simulate {
            config,
            seed,
            output,
            design,
            values,
            replications,
            estimator,
            summary_csv,
            reps_csv,
            lambda,
            als,
        } => {
            let mut cfg = read_simulate_config(&config)?;
            cfg.dgp.rng_seed = seed;
            let als_config = als.config(seed);
            let design_override = match (design, values) {
                (Some(d), Some(v)) => Some(build_design(d, &v)?),
                (Some(_), None) => {
                    return Err(CliError::new("usage", "--design requires --values"))
                }
                _ => None,
            };
            let experiment = match (&cfg.experiment, design_override) {
                (_, Some(d)) => Some((
                    d,
                    replications.unwrap_or(50),
                    match estimator {
                        VariantArg::Lrs => EstimatorKind::LowRankPlusSparse,
                        _ => EstimatorKind::LowRank,
                    },
                )),
                (Some(section), None) => Some((
                    section.to_design()?,
                    replications.unwrap_or(section.replications),
                    section.to_estimator()?,
                )),
                (None, None) => None,
            };
            match experiment {
                Some((design, reps, kind)) => {
                    let summary = summary_csv.ok_or_else(|| {
                        CliError::new("usage", "experiment mode requires --summary-csv")
                    })?;
                    let reps_path = reps_csv
                        .unwrap_or_else(|| with_suffix(&summary, ".reps.csv"));
                    let exp = RateExperiment {
                        design,
                        base: cfg.dgp.clone(),
                        t_len: cfg.length,
                        replications: reps,
                        estimator: kind,
                        als: als_config,
                        lrs: LrsConfig {
                            lambda,
                            alpha_l: cfg.dgp.alpha_l,
                            ..LrsConfig::default()
                        },
                    };
                    let diag = tensar::sim::run_rate_experiment(&exp)?;
                    write_rate_csv(&diag, &summary, &reps_path)?;
                    Ok(())
                }
                None => {
                    let out = output.ok_or_else(|| {
                        CliError::new("usage", "series mode requires --output")
                    })?;
                    let mut rng = seeded_rng(seed);
                    let (lowrank, sparse) = gen_stationary_dgp(&cfg.dgp, &mut rng)?;
                    let series = simulate_series(
                        &cfg.dgp,
                        &lowrank,
                        sparse.as_ref(),
                        cfg.length,
                        &mut rng,
                    )?;
                    write_series(&series, &out)?;
                    Ok(())
                }
            }
        }
        Command::Select {
            input,
            output,
            chosen,
            train_len,
            val_len,
            grid_pmax,
            grid_rymax,
            grid_rxmax,
            variant,
            lambda_grid,
            joint_lambda,
            seed,
            als,
        } => {
            let series = read_series(&input)?;
            let mut plan = HoldoutPlan::new(train_len, val_len);
            plan.p_max = grid_pmax;
            plan.r_y_max = grid_rymax;
            plan.r_x_max = grid_rxmax;
            plan.lambda_grid = lambda_grid;
            plan.joint_lambda = joint_lambda;
            let kind = match variant {
                VariantArg::Lrs => EstimatorKind::LowRankPlusSparse,
                _ => EstimatorKind::LowRank,
            };
            let als_config = als.config(seed);
            let result = holdout_select(
                &series,
                &plan,
                kind,
                &als_config,
                &LrsConfig {
                    als: als_config.clone(),
                    ..LrsConfig::default()
                },
            )?;
            write_scores_csv(&result.table, &output)?;
            let chosen_path = chosen.unwrap_or_else(|| with_suffix(&output, ".chosen.json"));
            let text = serde_json::to_string_pretty(&result.best)
                .map_err(|e| CliError::new("report", e))?;
            std::fs::write(chosen_path, text)
                .map_err(|e| CliError::from(tensar::io::IoError::from(e)))?;
            Ok(())
        }
        Command::ImportCsv {
            input,
            output,
            dims,
            has_header,
        } => {
            if dims.is_empty() {
                return Err(CliError::new("usage", "--dims must be nonempty"));
            }
            let series = read_series_csv(&input, &dims, has_header)?;
            write_series(&series, &output)?;
            Ok(())
        }
    }
}

fn build_design(d: DesignArg, values: &[f64]) -> Result<tensar::sim::RateDesign, CliError> {
    use tensar::sim::RateDesign::*;
    let ints = || -> Result<Vec<usize>, CliError> {
        values
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && v >= 1.0 {
                    Ok(v as usize)
                } else {
                    Err(CliError::new(
                        "usage",
                        format!("design value {v} must be a positive integer"),
                    ))
                }
            })
            .collect()
    };
    Ok(match d {
        DesignArg::VaryT => VaryT(ints()?),
        DesignArg::VaryRanks => VaryRanks(ints()?),
        DesignArg::VaryDims => VaryDims(ints()?),
        DesignArg::VaryAlpha => VaryAlpha(values.to_vec()),
    })
}

fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}
