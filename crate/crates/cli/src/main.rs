//! `safegame`: safety checks, certificates, dynamics and decompositions for
//! multi-agent gradient games.
//!
//! Exit codes: 0 safe/certified/converged, 2 the property does not hold,
//! 1 operational error.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{DecomposeMode, Outcome};
use config::{Overrides, Scenario};

#[derive(Parser)]
#[command(name = "safegame", version, about = "Safety certificates and gradient dynamics for multi-agent games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ScenarioArgs {
    /// JSON scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named example: ex3, ex4, ex5, ex6, saddle, fa, bss-open, bss-block, ica.
    #[arg(long)]
    example: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for reports and CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Safety samples, or sweep cases for `fa`.
    #[arg(long)]
    samples: Option<usize>,
    /// Maximum dynamics rounds.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample pairwise gradient inner products.
    CheckSafety(ScenarioArgs),
    /// Run gradient play and check the end point for a Nash equilibrium.
    Simulate(ScenarioArgs),
    /// Run the structural certificate matching the game's loss family.
    Certify(ScenarioArgs),
    /// Run a source-separation pipeline.
    Bss(ScenarioArgs),
    /// Decompose a tensor or a family of matrices from a JSON file.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hosvd,
    TensorSvdRecover,
    JointDiag,
}

fn scenario(args: ScenarioArgs) -> Result<Scenario> {
    Scenario::load(
        args.config.as_deref(),
        Overrides {
            example: args.example,
            seed: args.seed,
            out: args.out,
            samples: args.samples,
            rounds: args.rounds,
            tol: args.tol,
        },
    )
}

fn run(cli: Cli) -> Result<Outcome> {
    type Cmd = fn(&Scenario) -> Result<(Outcome, report::Report)>;
    let (cmd, args): (Cmd, ScenarioArgs) = match cli.command {
        Command::CheckSafety(a) => (commands::check_safety, a),
        Command::Simulate(a) => (commands::simulate_cmd, a),
        Command::Certify(a) => (commands::certify_cmd, a),
        Command::Bss(a) => (commands::bss_cmd, a),
        Command::Decompose { input, mode, rank, out, tol } => {
            let mode = match mode {
                ModeArg::Hosvd => DecomposeMode::Hosvd,
                ModeArg::TensorSvdRecover => DecomposeMode::TensorSvdRecover,
                ModeArg::JointDiag => DecomposeMode::JointDiag,
            };
            let (outcome, report) = commands::decompose(&input, mode, rank, tol)?;
            report.emit(out.as_deref())?;
            return Ok(outcome);
        }
    };
    let scn = scenario(args)?;
    let (outcome, report) = cmd(&scn)?;
    report.emit(scn.out_dir())?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Refuted) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
