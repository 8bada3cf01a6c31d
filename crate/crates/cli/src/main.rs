use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod diagnose;
mod estimate;
mod report;
mod simulate;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad input data or flags.
    Validation(String),
    /// The data were valid but estimation failed.
    Estimation(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Estimation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Estimation(m) => m,
        }
    }
}

impl From<staggered_ife::Error> for Failure {
    fn from(e: staggered_ife::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Estimation(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "staggered-ife", version, about = "Group-time treatment effects under interactive fixed effects")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = "STAGGERED_IFE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate ATT(g,t) and aggregates from a long-format panel CSV.
    Estimate(estimate::EstimateArgs),
    /// Run Monte Carlo designs and write bias / RMSE / MAD / rejection tables.
    Simulate(simulate::SimulateArgs),
    /// Report rank diagnostics and trend gaps for every candidate cell.
    Diagnose(diagnose::DiagnoseArgs),
}

fn ensure_out_dir(dir: &PathBuf) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Validation(format!("cannot create {}: {e}", dir.display())))
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Validation(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Estimate(args) => {
            ensure_out_dir(&args.out)?;
            estimate::run(&args)
        }
        Command::Simulate(args) => {
            ensure_out_dir(&args.out)?;
            simulate::run(&args)
        }
        Command::Diagnose(args) => {
            ensure_out_dir(&args.out)?;
            diagnose::run(&args)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
