//! One function per subcommand. Each reads its upstream artifacts from the
//! output root, writes its own directory and returns a one-line summary.

mod align;
mod ingest;
mod learn;
mod metrics;
mod report;
mod stats;

use calfplay::ethogram::EthogramTable;

use crate::artifacts::{open, Layout, Provenance};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub use align::{align, filter};
pub use ingest::{ingest, IntervalRow};
pub use learn::{evaluate, prepare, train};
pub use metrics::metrics;
pub use report::report;
pub use stats::fit_lmm;

pub struct Context {
    pub cfg: PipelineConfig,
    pub layout: Layout,
    pub prov: Provenance,
    pub table: EthogramTable,
}

impl Context {
    pub fn new(cfg: PipelineConfig) -> CliResult<Self> {
        let table = match &cfg.inputs.ethogram {
            Some(p) => EthogramTable::from_reader(open(p)?).map_err(|e| CliError::reading(p, e))?,
            None => EthogramTable::builtin(),
        };
        Ok(Context { layout: Layout::new(&cfg.output.dir), prov: Provenance::new(&cfg), cfg, table })
    }
}

/// Every pipeline command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Align,
    Filter,
    Metrics,
    FitLmm,
    Prepare,
    Train,
    Evaluate,
    Report,
}

pub fn run(command: Command, ctx: &Context) -> CliResult<String> {
    match command {
        Command::Ingest => ingest(ctx),
        Command::Align => align(ctx),
        Command::Filter => filter(ctx),
        Command::Metrics => metrics(ctx),
        Command::FitLmm => fit_lmm(ctx),
        Command::Prepare => prepare(ctx),
        Command::Train => train(ctx),
        Command::Evaluate => evaluate(ctx),
        Command::Report => report(ctx),
    }
}
