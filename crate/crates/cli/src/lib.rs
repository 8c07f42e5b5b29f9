//! Command-line orchestration for transcender: detector training, single
//! runs, evaluation, sweeps and reports.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod report;
pub mod runs;
pub mod svg;
pub mod sweep;

pub use cli::{run, Cli};
pub use error::{CliError, CliResult};
pub use experiment::{ExperimentSpec, Preset, OUTPUT_ROOT_ENV};
