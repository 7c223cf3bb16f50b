//! Configuration, file formats, and the stage commands behind the CLI.

pub mod commands;
pub mod config;
pub mod files;

pub use commands::{Ctx, cmd_cluster, cmd_demo, cmd_infer, cmd_report, cmd_simulate, cmd_spectra};
pub use config::{LoadedConfig, RunConfig};
