//! Command-line front end: instance generation, meta-training, evaluation
//! and derivative diagnostics, wired for reproducible seeded experiments.
//!
//! Exit codes: 0 success, 1 internal error, 2 invalid arguments, 3 I/O
//! failure, 4 training aborted on non-finite gradients, 5 model version
//! mismatch, 6 gradient-check failure, 7 degenerate scene.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::RunConfig;
use nlsq_core::Error as CoreError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nlsq", version, about = "Nonlinear least squares toolkit: classical and learned solvers")]
struct Cli {
    /// Plain-text config file (key = value lines under [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; all randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Accepted for compatibility; execution is single-threaded so outputs
    /// stay bit-reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic curve-fitting instances.
    GenCurves(commands::GenCurvesArgs),
    /// Generate a synthetic two-view stereo instance.
    GenScene(commands::GenSceneArgs),
    /// Meta-train the learned optimizer.
    Train(commands::TrainArgs),
    /// Benchmark solvers / run the timing sweep.
    Eval(commands::EvalArgs),
    /// Check analytic Jacobians and BPTT gradients against finite differences.
    Gradcheck(commands::GradcheckArgs),
}

#[derive(Debug)]
pub struct CliFailure {
    pub code: u8,
    pub message: String,
}

impl CliFailure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        CliFailure {
            code,
            message: message.into(),
        }
    }
}

impl From<CoreError> for CliFailure {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::InvalidConfig(_) | CoreError::DomainError(_) => 2,
            CoreError::Io(_) => 3,
            CoreError::NonFiniteGradient { .. } => 4,
            CoreError::VersionMismatch { .. } => 5,
            CoreError::DegenerateScene { .. } => 7,
            _ => 1,
        };
        CliFailure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliFailure {
    fn from(e: std::io::Error) -> Self {
        CliFailure::new(3, e.to_string())
    }
}

pub struct Ctx {
    pub config: RunConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let seed = match config.resolve("run.seed", cli.seed, 0u64) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let out_dir = cli.out.unwrap_or_else(|| PathBuf::from("out"));
    config.record("run.out", &out_dir.display());
    if let Some(threads) = cli.threads {
        config.record("run.threads", &threads);
        if threads > 1 {
            eprintln!(
                "note: --threads {threads} accepted; computation runs single-threaded so outputs stay bit-reproducible"
            );
        }
    }
    let ctx = Ctx {
        config,
        seed,
        out_dir,
    };
    let result = match cli.command {
        Command::GenCurves(args) => commands::gen_curves(&ctx, args),
        Command::GenScene(args) => commands::gen_scene(&ctx, args),
        Command::Train(args) => commands::train(&ctx, args),
        Command::Eval(args) => commands::eval(&ctx, args),
        Command::Gradcheck(args) => commands::gradcheck(&ctx, args),
    };
    // Provenance is written even on failure so partial runs are explainable.
    if let Err(e) = ctx.config.write_provenance(&ctx.out_dir) {
        eprintln!("warning: could not write resolved config: {e}");
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
