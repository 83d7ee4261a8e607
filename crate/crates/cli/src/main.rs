//! `capforge`: enhance image-caption datasets with multi-view captions, and
//! inspect and evaluate the result.

mod enhance;
mod shear;
mod stats;
mod toy;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, missing inputs. Nothing has been written.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn usage(e: impl ToString) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn runtime(e: impl ToString) -> Self {
        CliError::Runtime(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult = Result<(), CliError>;

/// Prints a line to stdout; a closed pipe (`capforge plan | head`) is not an
/// error.
#[macro_export]
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "capforge", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Caption every image with each endpoint of the pool and write the
    /// enhanced dataset.
    Enhance(enhance::EnhanceArgs),
    /// Print the shard plan for a run config without calling any endpoint.
    Plan(enhance::PlanArgs),
    /// Length, word-frequency and image-text similarity statistics.
    Stats(stats::StatsArgs),
    /// Shear a caption file (plain text lines or annotation JSONL).
    Shear(shear::ShearArgs),
    /// Train the toy dual encoder on synthetic multi-view data.
    TrainToy(toy::TrainArgs),
    /// Retrieval metrics for a trained toy model.
    Eval(toy::EvalArgs),
    /// Sweep one training factor over seeds and write a CSV.
    Ablate(toy::AblateArgs),
    /// Write a small synthetic annotation set with PNG images.
    Fixture(FixtureArgs),
}

#[derive(Debug, clap::Args)]
struct FixtureArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 12)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("CAPFORGE_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Enhance(a) => enhance::cmd_enhance(a),
        Command::Plan(a) => enhance::cmd_plan(a),
        Command::Stats(a) => stats::cmd_stats(a),
        Command::Shear(a) => shear::cmd_shear(a),
        Command::TrainToy(a) => toy::cmd_train(a),
        Command::Eval(a) => toy::cmd_eval(a),
        Command::Ablate(a) => toy::cmd_ablate(a),
        Command::Fixture(a) => {
            let path = capforge::fixture::write_fixture(&a.dir, a.n, a.seed).map_err(CliError::runtime)?;
            say!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
