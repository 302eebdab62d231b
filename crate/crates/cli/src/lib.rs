//! Pipeline commands, run configuration and checkpoint persistence for the
//! `ccrnn` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod lock;

use std::path::PathBuf;

use anyhow::Result;

use config::{ConfigError, Overrides, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Ingest,
    BuildGraph,
    Train,
    Evaluate,
    Predict,
    Ablate,
}

/// Exit status for a failed command: 2 for configuration and schema
/// problems, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<ccrnn::Error>() {
            return match e {
                ccrnn::Error::Schema(_) | ccrnn::Error::InvalidArgument(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

/// Loads the config, applies flag overrides, locks the output directory,
/// echoes the effective config and runs `command`.
pub fn run(command: Command, config: Option<PathBuf>, overrides: &Overrides) -> Result<()> {
    let mut cfg = match &config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(overrides);
    cfg.validate()?;
    let out = cfg.output_dir();
    let _lock = lock::OutputLock::acquire(&out)?;
    std::fs::write(out.join(commands::EFFECTIVE_CONFIG), cfg.to_toml())?;
    match command {
        Command::Ingest => commands::ingest(&cfg, &out),
        Command::BuildGraph => commands::build_graph(&cfg, &out),
        Command::Train => commands::train(&cfg, &out),
        Command::Evaluate => commands::evaluate_cmd(&cfg, &out),
        Command::Predict => commands::predict(&cfg, &out),
        Command::Ablate => commands::ablate(&cfg, &out),
    }
    .map_err(|e| if e.is::<ConfigError>() { e } else { e.context(format!("{command:?} failed")) })
}
