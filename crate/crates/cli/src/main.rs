//! `vreach` — batch front end: sample-size certificates, offline
//! preparation, verification and K̂ sweeps.
//!
//! Exit codes: 0 success, 1 internal failure, 2 configuration error,
//! 3 solver node budget exhausted (reported bounds are still valid).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "vreach",
    version,
    about = "Scenario-based reach-avoid verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the number of scenarios required for (delta, beta).
    SampleSize {
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        beta: f64,
    },
    /// Write the spacecraft rendezvous benchmark as system/spec/noise files.
    RendezvousConfig {
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample scenarios, partition them and store the offline artifact.
    Prepare(PrepareArgs),
    /// Solve for an initial state using a stored artifact.
    Verify(VerifyArgs),
    /// Repeat prepare + verify over seeds and cell counts and aggregate.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ProblemArgs {
    /// System JSON: {"A": [[..]], "B": [[..]]}.
    #[arg(long)]
    system: PathBuf,
    /// Spec JSON: {"safe": {"f","h"}, "target": {"f","h"}, "N", "input_box": {"lo","hi"}}.
    #[arg(long)]
    spec: PathBuf,
    /// Noise JSON, e.g. {"kind": "gaussian_diag", "mean": [..], "variance": [..]}.
    #[arg(long)]
    noise: PathBuf,
    /// Number of scenarios.
    #[arg(long = "K", conflicts_with_all = ["delta", "beta"])]
    k: Option<usize>,
    /// Violation parameter; with --beta derives K.
    #[arg(long, requires = "beta")]
    delta: Option<f64>,
    /// Risk of failure; with --delta derives K.
    #[arg(long, requires = "delta")]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Fixed number of cells.
    #[arg(long, conflicts_with_all = ["knee", "budget_s"])]
    khat: Option<usize>,
    /// Choose the cell count at the knee of the WSS curve.
    #[arg(long, conflicts_with = "budget_s")]
    knee: bool,
    /// Choose the largest cell count whose solve fits in this many seconds
    /// (needs --x0; not reproducible).
    #[arg(long = "budget-s")]
    budget_s: Option<f64>,
    /// WSS curve grid, e.g. "1-100" or "1-20,30,40" (default 1..min(K,100)).
    #[arg(long)]
    grid: Option<String>,
    /// k-means restarts per cell count.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Calibration initial state for --budget-s.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Optional initial-state perturbation noise JSON (prediction map
    /// G_x η + G_w W).
    #[arg(long)]
    initial_noise: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Partitioned,
    Full,
    Evaluate,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    x0: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Partitioned)]
    mode: Mode,
    /// Input trajectory for --mode evaluate.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    u: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1_000_000)]
    node_limit: usize,
    /// Also write the program in LP file format.
    #[arg(long)]
    dump_lp: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Cell counts, e.g. "20,40,100".
    #[arg(long)]
    khat: String,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    x0: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 1_000_000)]
    node_limit: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SampleSize { delta, beta } => commands::sample_size(delta, beta),
        Command::RendezvousConfig { out } => commands::rendezvous_config(&out),
        Command::Prepare(args) => commands::prepare(&args),
        Command::Verify(args) => commands::verify(&args),
        Command::Sweep(args) => commands::sweep(&args),
    };
    match result {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::BudgetExceeded) => {
            eprintln!("warning: node budget exhausted; reported values are bounds, not optima");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
