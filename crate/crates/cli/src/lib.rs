//! Experiment runner: strict JSON configs, seeded pipelines and artifact
//! directories for every subcommand.

pub mod commands;
pub mod config;
pub mod error;
pub mod parallel;

use std::path::Path;

use clap::ValueEnum;

pub use commands::RunOptions;
pub use error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Toy,
    Train,
    Transfer,
    Similarity,
    Bound,
    Report,
}

/// Runs one subcommand and returns its result as JSON.
pub fn run(command: Command, config_path: &Path, opts: &RunOptions) -> CliResult<serde_json::Value> {
    let loaded = config::load_config(config_path)?;
    let json = |v: Result<serde_json::Value, serde_json::Error>| {
        v.map_err(|e| CliError::new("INTERNAL", error::EXIT_OTHER, e.to_string()))
    };
    match command {
        Command::Toy => json(serde_json::to_value(commands::toy::run(&loaded, opts)?.0)),
        Command::Train => json(serde_json::to_value(commands::train::run(&loaded, opts)?)),
        Command::Transfer => json(serde_json::to_value(commands::transfer::run(&loaded, opts)?)),
        Command::Similarity => json(serde_json::to_value(commands::similarity::run(&loaded, opts)?)),
        Command::Bound => json(serde_json::to_value(commands::bound::run(&loaded, opts)?)),
        Command::Report => json(serde_json::to_value(commands::report::run(&loaded, opts)?)),
    }
}
