//! `gicshield`: command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input (files, flags, placements, budget
//! guard), 3 solver failure (a run that did not converge still writes its
//! output first).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gicshield::GicError;

#[derive(Debug, Parser)]
#[command(name = "gicshield", version, about = "Blocking-device placement against geomagnetically induced currents")]
pub struct Cli {
    /// TOML file overriding solver and benchmark defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// NLP constraint and stationarity tolerance.
    #[arg(long, global = true, value_name = "TOL")]
    pub nlp_tol: Option<f64>,

    /// NLP outer (multiplier) iteration cap.
    #[arg(long, global = true, value_name = "N")]
    pub nlp_max_iters: Option<usize>,

    /// More log output on stderr (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run ADMM or stochastic learning and report the placement found.
    Solve(SolveArgs),
    /// Score one placement: GIC solve followed by the AC-OPF.
    Evaluate(EvaluateArgs),
    /// Solve the DC circuit for one placement.
    Gic(GicArgs),
    /// Run algorithms over a grid of fields and budgets; one CSV row per cell.
    Benchmark(BenchmarkArgs),
    /// Evaluate every placement within the budget and report the table.
    Enumerate(EnumerateArgs),
}

#[derive(Debug, Args)]
pub struct NetworkArg {
    /// Network file, or the name of a bundled network (case5_synth, case12_synth, case21_synth).
    #[arg(long, value_name = "FILE|NAME")]
    pub network: String,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Uniform field magnitude, V/km.
    #[arg(long, value_name = "V/KM", conflicts_with = "xi_file")]
    pub efield: Option<f64>,

    /// Field direction as a compass bearing, degrees.
    #[arg(long, value_name = "DEG", default_value_t = 45.0)]
    pub direction: f64,

    /// Explicit induced voltages: CSV with header `edge,xi` (volts per DC edge label).
    #[arg(long, value_name = "FILE")]
    pub xi_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlacementArg {
    /// Substation labels to block, comma separated; empty for none.
    #[arg(long, value_name = "LABELS", default_value = "", allow_hyphen_values = true)]
    pub placement: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveAlgorithm {
    Admm,
    Sl,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, value_enum)]
    pub algorithm: SolveAlgorithm,
    #[command(flatten)]
    pub network: NetworkArg,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Maximum number of blocking devices.
    #[arg(long)]
    pub budget: usize,

    /// ADMM initial penalty.
    #[arg(long)]
    pub rho0: Option<f64>,
    /// ADMM residual-balancing ratio.
    #[arg(long)]
    pub beta: Option<f64>,
    /// ADMM penalty multiplier.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Keep the ADMM penalty constant.
    #[arg(long)]
    pub no_nrb: bool,

    /// SL samples per iteration.
    #[arg(long)]
    pub samples: Option<usize>,
    /// SL step constant `a` in `a / t`.
    #[arg(long)]
    pub step_a: Option<f64>,
    /// SL seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Stopping tolerance: residuals for ADMM, gradient norm for SL.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,

    /// Per-iteration trace CSV.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Print a JSON record instead of a CSV row.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub network: NetworkArg,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub budget: usize,
    #[command(flatten)]
    pub placement: PlacementArg,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GicArgs {
    #[command(flatten)]
    pub network: NetworkArg,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub placement: PlacementArg,
    /// Pin a reference node in components left without a ground instead of failing.
    #[arg(long)]
    pub pin_reference: bool,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[command(flatten)]
    pub network: NetworkArg,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub budget: usize,
    /// Allow more evaluations than the enumeration guard.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Network file or bundled name; repeat for several.
    #[arg(long = "network", value_name = "FILE|NAME")]
    pub networks: Vec<String>,
    /// Field magnitudes, V/km.
    #[arg(long, value_delimiter = ',')]
    pub efields: Option<Vec<f64>>,
    #[arg(long)]
    pub direction: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    /// Any of admm, sl, enumerate.
    #[arg(long, value_delimiter = ',')]
    pub algorithms: Option<Vec<gicshield::Algorithm>>,
    /// Concurrent cells; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// SL seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write 0 in the wall_time column so that repeated runs are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub force: bool,
    /// Output CSV; standard output when omitted.
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

/// A run that finished but did not converge. Its output has been written.
#[derive(Debug)]
pub struct SolverFailure(pub String);

impl std::fmt::Display for SolverFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SolverFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<SolverFailure>().is_some() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<GicError>() {
            return match e {
                GicError::Solver(_) | GicError::NonFinite(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
