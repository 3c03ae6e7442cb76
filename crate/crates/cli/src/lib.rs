//! Pipeline driver behind the `calfplay` binary: configuration, artifact
//! layout and one stage per subcommand.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use stages::{run, Command, Context};
