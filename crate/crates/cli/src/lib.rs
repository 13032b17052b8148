//! Orchestration for the `ubem-gp` command: configuration, file contracts,
//! stage caching and the pipeline itself.

pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{Run, Stage, StageOptions};
