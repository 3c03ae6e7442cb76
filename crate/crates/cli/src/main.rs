use std::path::PathBuf;
use std::process::ExitCode;

use calfplay_cli::{config, run, CliError, Command, Context};
use clap::{Parser, Subcommand};

/// Calf play behaviour pipeline.
///
/// Each command reads the artifacts of the previous stage under the output
/// directory and writes its own subdirectory there.
#[derive(Parser)]
#[command(name = "calfplay", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set train.max_epochs=10`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Seed for every random choice (balancing, splits, initialization).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long, global = true, env = "CALFPLAY_OUTPUT")]
    output: Option<PathBuf>,
    /// Worker threads for file parsing and embedding loading.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Parse event logs, frame metadata and OCR readings.
    Ingest,
    /// Filter detections and label every frame with its active states.
    Align,
    /// Apply the frame-exclusion criteria.
    Filter,
    /// Per-calf play percentages and event rates.
    Metrics,
    /// Random-intercept model of play against space allowance.
    FitLmm,
    /// Balance classes and assign train/val/test splits.
    Prepare,
    /// Train the classifier.
    Train,
    /// Evaluate the checkpoint on the test split.
    Evaluate,
    /// Summarize every stage that has run.
    Report,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Ingest => Command::Ingest,
            Cmd::Align => Command::Align,
            Cmd::Filter => Command::Filter,
            Cmd::Metrics => Command::Metrics,
            Cmd::FitLmm => Command::FitLmm,
            Cmd::Prepare => Command::Prepare,
            Cmd::Train => Command::Train,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::Report => Command::Report,
        }
    }
}

fn execute(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(format!("thread pool: {e}")))?;
    }
    let cfg = config::load(cli.config.as_deref(), &cli.set, cli.seed, cli.output)?;
    let ctx = Context::new(cfg)?;
    run(cli.command.into(), &ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
