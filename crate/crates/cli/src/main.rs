use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proto_ope_cli::{commands, ExperimentConfig, Result};

#[derive(Debug, Parser)]
#[command(
    name = "proto-ope",
    version,
    about = "Off-policy evaluation with prototype behavior estimates"
)]
struct Cli {
    /// TOML configuration file; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `output_dir` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate train, calibration and evaluation splits.
    GenData,
    /// Train and calibrate the behavior-policy estimator.
    FitBehavior,
    /// Estimate the target policy's value with IS and WIS.
    Evaluate,
    /// Weight-ratio and value-error sweep over horizons and replications.
    BiasSweep,
    /// Prototype summary and latent encodings of a prototype model.
    ProtoReport,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    let config = load(cli)?;
    match cli.command {
        Command::GenData => commands::gen_data(&config),
        Command::FitBehavior => commands::fit_behavior(&config),
        Command::Evaluate => commands::evaluate(&config),
        Command::BiasSweep => commands::bias_sweep(&config),
        Command::ProtoReport => commands::proto_report(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
