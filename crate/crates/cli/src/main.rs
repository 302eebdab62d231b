use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ccrnn::train_eval::AblationVariant;
use ccrnn_cli::config::Overrides;
use ccrnn_cli::{exit_code, run, Command};

#[derive(Parser)]
#[command(name = "ccrnn", version, about = "Station-level demand forecasting with coupled graph convolutional recurrent networks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides `train.seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides `output`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Model variant: full, no_adaptive, no_coupling, random_init, distance_init, pcc_init.
    #[arg(long, global = true, value_name = "TAG", value_parser = parse_variant)]
    variant: Option<AblationVariant>,
}

fn parse_variant(s: &str) -> Result<AblationVariant, String> {
    s.parse().map_err(|e: ccrnn::Error| e.to_string())
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse trip records into stations and a binned demand tensor.
    Ingest,
    /// Build initial graph factors from the training range.
    BuildGraph,
    /// Train and keep the best-validation checkpoint.
    Train,
    /// Report test metrics of the checkpoint against the historical average.
    Evaluate,
    /// Forecast the bins after the end of the series.
    Predict,
    /// Train and test every configured variant.
    Ablate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Ingest => Command::Ingest,
        Cmd::BuildGraph => Command::BuildGraph,
        Cmd::Train => Command::Train,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Predict => Command::Predict,
        Cmd::Ablate => Command::Ablate,
    };
    let overrides = Overrides { seed: cli.common.seed, out: cli.common.out, variant: cli.common.variant };
    match run(command, cli.common.config, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
