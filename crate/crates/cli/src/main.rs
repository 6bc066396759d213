//! `bubsim`: generate synthetic data, simulate demand, calibrate parameters and
//! analyze the calibration log.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::run::Failure;

#[derive(Parser, Debug)]
#[command(name = "bubsim", version, about = "Hospital patient-flow simulation and calibration")]
struct Cli {
    /// Scenario file (JSON); the canonical scenario when omitted.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,

    /// Master seed; overrides the scenario's seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Observed `date,count` series instead of synthetic arrivals.
    #[arg(long, global = true, value_name = "CSV")]
    cases: Option<PathBuf>,

    /// Output directory; defaults to `runs/<timestamp>-seed<seed>`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for replications and surrogate fits.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the infection series and the reference demand.
    Generate,
    /// Simulate demand for one parameter vector and score it.
    Simulate(SimulateArgs),
    /// Calibrate parameters by surrogate-based optimization.
    Optimize(OptimizeArgs),
    /// Regression, tree and contour analysis of an evaluation log.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// JSON object mapping parameter names to values; unnamed ones keep defaults.
    #[arg(long, value_name = "JSON")]
    params: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    /// Total number of objective evaluations.
    #[arg(long, default_value_t = bubsim::optimizer::DEFAULT_BUDGET)]
    budget: usize,

    /// Initial Latin hypercube size; max(2d, 10) when omitted.
    #[arg(long, value_name = "N")]
    design_size: Option<usize>,

    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "CHECKPOINT")]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Evaluation log written by `optimize`.
    log: PathBuf,

    /// Significance level for backward elimination.
    #[arg(long, default_value_t = bubsim::sensitivity::DEFAULT_ALPHA)]
    alpha: f64,

    #[arg(long, default_value_t = bubsim::sensitivity::DEFAULT_MAX_DEPTH)]
    max_depth: usize,

    #[arg(long, default_value_t = bubsim::sensitivity::DEFAULT_MIN_LEAF)]
    min_leaf: usize,

    /// Contour grid resolution per axis.
    #[arg(long, default_value_t = 41)]
    grid: usize,

    /// Contour axes; default to the two most significant regression variables.
    #[arg(long, value_name = "NAME")]
    contour_x: Option<String>,

    #[arg(long, value_name = "NAME")]
    contour_y: Option<String>,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("BUBSIM_LOG", "warn");
    env_logger::Builder::from_env(env).format_timestamp_millis().init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
