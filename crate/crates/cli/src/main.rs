mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ring_clusters::continuation::{Direction, SWITCH_EPSILON};
use ring_clusters::symmetry::SOLVER_TOL;

use crate::error::{exit, CliError};

#[derive(Debug, Parser)]
#[command(name = "ringclust", version, about = "Cluster states of a delay-coupled ring of four oscillators")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep the delay and solve the two-unknown primary-state system.
    Oracle(OracleArgs),
    /// Converge a single equilibrium and write it as a record.
    Solve(SolveArgs),
    /// Trace a branch of equilibria in the delay and locate its bifurcations.
    Continue(ContinueArgs),
    /// Integrate the delay equations from a (perturbed) equilibrium.
    Simulate(SimulateArgs),
    /// Characteristic roots of an equilibrium.
    Stability(StabilityArgs),
    /// Isotropy subgroup of an equilibrium.
    Classify(ClassifyArgs),
    /// Transport an equilibrium along the delay-parameter symmetry and re-converge it.
    Shift(ShiftArgs),
}

/// Model parameters and run plumbing shared by every subcommand.
#[derive(Debug, Clone, Args)]
struct ModelArgs {
    /// Key-value file (`key = value` per line) applied before the command-line flags.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Parameter preset: `relaxation` or `smooth`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// One intrinsic frequency or four comma-separated ones.
    #[arg(long, value_name = "W|W1,W2,W3,W4", allow_hyphen_values = true)]
    omega: Option<String>,
    /// Amplitude-dependent frequency shift.
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// Coupling strength.
    #[arg(long = "K", allow_hyphen_values = true)]
    k: Option<f64>,
    /// Interaction functions: `relaxation`, `sinusoidal`, or a coefficient file.
    #[arg(long, value_name = "NAME|PATH")]
    interaction: Option<String>,
    #[arg(long, env = "RINGCLUST_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for root computations.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Cluster index: equal neighbour lags of 2 pi m / 4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=3))]
    m: u8,
    /// Delay grid `start:stop:count`.
    #[arg(long, default_value = "0.3:2.0:200")]
    tau: String,
}

/// Where the starting equilibrium comes from.
#[derive(Debug, Clone, Args)]
struct SeedArgs {
    /// `primary:M@TAU`, or `file:PATH[#INDEX]` naming a record, a branch bundle or a bare equilibrium.
    #[arg(long)]
    seed: String,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    seed: SeedArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DirectionArg {
    Forward,
    Backward,
    Both,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Forward => Direction::Forward,
            DirectionArg::Backward => Direction::Backward,
            DirectionArg::Both => Direction::Both,
        }
    }
}

#[derive(Debug, Args)]
struct ContinueArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, conflicts_with = "from_pitchfork", required_unless_present = "from_pitchfork")]
    seed: Option<String>,
    /// Branch bundle or bifurcation record holding the pitchfork to switch at.
    #[arg(long, value_name = "PATH")]
    from_pitchfork: Option<PathBuf>,
    /// Index into the bifurcation list; defaults to the first pitchfork.
    #[arg(long, requires = "from_pitchfork")]
    bifurcation_index: Option<usize>,
    /// Which of the two pitchfork children to follow: 1 or -1.
    #[arg(long, default_value_t = 1, allow_hyphen_values = true, value_parser = parse_side)]
    side: i32,
    /// Offset along the critical direction used to leave the pitchfork.
    #[arg(long, default_value_t = SWITCH_EPSILON)]
    epsilon: f64,
    /// Delay interval `start:stop` the branch is confined to.
    #[arg(long, default_value = "0.1:2.6")]
    range: String,
    #[arg(long, value_enum, default_value = "both")]
    direction: DirectionArg,
    #[arg(long)]
    step_initial: Option<f64>,
    #[arg(long)]
    step_min: Option<f64>,
    #[arg(long)]
    step_max: Option<f64>,
    #[arg(long)]
    max_points: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    seed: SeedArgs,
    #[arg(long, default_value_t = 200.0)]
    t_end: f64,
    /// Integration step; defaults to a divisor of the delay near 0.01.
    #[arg(long)]
    dt: Option<f64>,
    /// Size of the random perturbation added to the history.
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
    #[arg(long, default_value_t = 7)]
    rng_seed: u64,
    /// Trailing fraction of the run used for classification.
    #[arg(long, default_value_t = 0.5)]
    tail: f64,
    /// Write every n-th sample to the trajectory CSV.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Debug, Args)]
struct StabilityArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    seed: SeedArgs,
    /// Number of leading roots to report.
    #[arg(long, default_value_t = 10)]
    roots: usize,
    /// Also compute the roots of the full rotating-frame linearization.
    #[arg(long)]
    full: bool,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    seed: SeedArgs,
    #[arg(long, default_value_t = SOLVER_TOL)]
    tol: f64,
}

#[derive(Debug, Args)]
struct ShiftArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    seed: SeedArgs,
    /// Number of quarter turns per link; the delay moves by j pi / (2 Omega).
    #[arg(long, allow_hyphen_values = true)]
    j: i64,
}

fn parse_side(s: &str) -> Result<i32, String> {
    match s.trim() {
        "1" | "+1" | "+" => Ok(1),
        "-1" | "-" => Ok(-1),
        other => Err(format!("side must be 1 or -1, got {other:?}")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Oracle(a) => commands::oracle(a),
        Command::Solve(a) => commands::solve(a),
        Command::Continue(a) => commands::continue_cmd(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Stability(a) => commands::stability(a),
        Command::Classify(a) => commands::classify(a),
        Command::Shift(a) => commands::shift(a),
    }
}

fn main() -> ExitCode {
    let args = match config::splice_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("ringclust: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("ringclust: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
