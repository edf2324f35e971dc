//! Command-line interface: Monte Carlo simulation tables, population-mean
//! estimation on CSV data, and covariate selection reports.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use aipw::error::Error;
use aipw::estimators::{Lambda2Choice, Method, PropOptions};
use aipw::harness::{run_experiment, CellSpec, Design, ExperimentPlan, Size};
use aipw::io::{read_incomplete_csv, EstimateReport, SelectReport};
use aipw::kernel::{KernelConfig, DEFAULT_RIDGE};
use aipw::select::{fit_sparse_krr, ThresholdSearchConfig};

#[derive(Parser)]
#[command(name = "aipw", version, about = "AIPW population-mean estimation under nonresponse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo benchmark cells and write the metrics table.
    Simulate(SimulateArgs),
    /// Estimate the mean of a partially observed CSV column.
    Estimate(EstimateArgs),
    /// Report gradient norms and the selected covariates of a CSV dataset.
    Select(SelectArgs),
}

fn parse_design(s: &str) -> Result<Design, String> {
    Design::parse(s.trim()).ok_or_else(|| format!("unknown design '{s}'"))
}

fn parse_size(s: &str) -> Result<Size, String> {
    Size::parse(s.trim()).ok_or_else(|| format!("unknown size '{s}'"))
}

fn parse_estimator(s: &str) -> Result<Method, String> {
    Method::parse(s.trim()).ok_or_else(|| format!("unknown estimator '{s}'"))
}

fn parse_lambda2(s: &str) -> Result<Lambda2Choice, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Lambda2Choice::Auto);
    }
    s.parse::<f64>()
        .map_err(|_| format!("lambda2 must be 'auto' or a nonnegative number, got '{s}'"))
        .and_then(|v| {
            if v >= 0.0 {
                Ok(Lambda2Choice::Fixed(v))
            } else {
                Err("lambda2 must be nonnegative".into())
            }
        })
}

#[derive(Args)]
struct SimulateArgs {
    /// Comma-separated designs (C1..C4).
    #[arg(long, value_parser = parse_design, value_delimiter = ',', default_value = "C1,C2,C3,C4")]
    designs: Vec<Design>,
    /// Comma-separated sizes (I..IV).
    #[arg(long, value_parser = parse_size, value_delimiter = ',', default_value = "I,II,III,IV")]
    sizes: Vec<Size>,
    /// Monte Carlo replicates per cell (desk-scale default 100).
    #[arg(long = "M")]
    replicates: Option<usize>,
    /// Use the full replication count (500) unless --M is given.
    #[arg(long)]
    full: bool,
    /// Comma-separated estimators (CC,PS,DI,NAIPW,PROP).
    #[arg(long, value_parser = parse_estimator, value_delimiter = ',', default_value = "CC,PS,DI,NAIPW,PROP")]
    estimators: Vec<Method>,
    /// Base seed; all replicate streams derive from it.
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Output format: csv, md or json.
    #[arg(long, default_value = "md")]
    format: String,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuningArgs {
    /// Kernel ridge parameter.
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    lambda: f64,
    /// Group-lasso penalty: 'auto' (BIC) or a fixed value.
    #[arg(long, value_parser = parse_lambda2, default_value = "auto")]
    lambda2: Lambda2Choice,
    /// Clamp propensities into [0.01, 0.99] before weighting.
    #[arg(long)]
    clamp_propensity: bool,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Name of the response column; empty cells or NA are missing.
    #[arg(long)]
    response_col: String,
    /// Studentize covariates (all rows) and response (observed entries).
    #[arg(long)]
    studentize: bool,
    /// Seed of the stability-split streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    response_col: String,
    #[arg(long)]
    studentize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Kernel ridge parameter.
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    lambda: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let replicates = args.replicates.unwrap_or(if args.full { 500 } else { 100 });
    let cells: Vec<CellSpec> = args
        .designs
        .iter()
        .flat_map(|&design| args.sizes.iter().map(move |&size| CellSpec { design, size }))
        .collect();
    let mut plan = ExperimentPlan::new(cells, replicates, args.estimators, args.seed)?;
    plan.ridge = args.tuning.lambda;
    plan.lambda2 = args.tuning.lambda2;
    plan.clamp_propensity = args.tuning.clamp_propensity;
    let table = run_experiment(&plan)?;
    let rendered = match args.format.as_str() {
        "csv" => table.to_csv(),
        "md" => table.to_markdown(),
        "json" => table.to_json(),
        other => {
            return Err(Error::Data(format!(
                "unknown format '{other}' (expected csv, md or json)"
            )))
        }
    };
    write_output(&args.out, &rendered)
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), Error> {
    let csv = read_incomplete_csv(&args.input, &args.response_col, args.studentize)?;
    let mut opts = PropOptions::new(args.seed);
    opts.ridge = args.tuning.lambda;
    opts.lambda2 = args.tuning.lambda2;
    if args.tuning.clamp_propensity {
        opts.aipw.clamp = Some(aipw::estimators::PROPENSITY_FLOOR);
    }
    let fit = aipw::estimators::prop_estimate(&csv.data, &opts)?;

    let selected_indices: Vec<usize> =
        fit.sparse.active.indices.iter().map(|&i| i + 1).collect();
    let selected_covariates: Vec<String> = fit
        .sparse
        .active
        .indices
        .iter()
        .map(|&i| csv.covariate_names[i].clone())
        .collect();
    let propensity_nonzero_groups = match &fit.propensity {
        Some(model) => model
            .nonzero_groups()
            .iter()
            .map(|cols| cols.iter().map(|&j| csv.covariate_names[j].clone()).collect())
            .collect(),
        None => Vec::new(),
    };
    let report = EstimateReport {
        n: csv.data.n(),
        p: csv.data.x().cols(),
        response_rate: csv.data.response_rate(),
        theta_hat: fit.estimate.theta_hat,
        sigma2_hat: fit.estimate.sigma2_hat,
        ci_low: fit.estimate.ci_low,
        ci_high: fit.estimate.ci_high,
        selected_indices,
        selected_covariates,
        threshold: fit.sparse.search.threshold,
        no_signal: fit.sparse.search.no_signal,
        propensity_nonzero_groups,
        lambda2: fit.propensity.as_ref().map(|m| m.lambda2),
        small_propensity_count: fit.estimate.small_propensity_count,
        studentized: csv.studentized,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("serialization failed: {e}")))?;
    write_output(&args.out, &format!("{json}\n"))
}

fn cmd_select(args: SelectArgs) -> Result<(), Error> {
    let csv = read_incomplete_csv(&args.input, &args.response_col, args.studentize)?;
    let (x_obs, y_obs) = csv.data.observed();
    let config = KernelConfig::with_median_bandwidth(&x_obs, args.lambda)?;
    let fitted = fit_sparse_krr(&x_obs, &y_obs.view(), &config, &ThresholdSearchConfig::new(args.seed))?;
    let report = SelectReport {
        n_complete: x_obs.rows(),
        p: csv.data.x().cols(),
        gradient_norms: fitted.norms.values().to_vec(),
        threshold: fitted.search.threshold,
        no_signal: fitted.search.no_signal,
        active_indices: fitted.active.indices.iter().map(|&i| i + 1).collect(),
        active_covariates: fitted
            .active
            .indices
            .iter()
            .map(|&i| csv.covariate_names[i].clone())
            .collect(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("serialization failed: {e}")))?;
    write_output(&args.out, &format!("{json}\n"))
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Data(_)
        | Error::DegenerateInput(_)
        | Error::Domain(_)
        | Error::DimensionMismatch(_) => 3,
        Error::Numerical(_) | Error::Convergence(_) | Error::SingularBandwidth => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Select(args) => cmd_select(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
