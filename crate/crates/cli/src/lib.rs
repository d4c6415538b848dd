//! Experiment driver for the `proto-ope` binary.
//!
//! Every command reads its inputs from, and writes its outputs to, the
//! configured output directory. Outputs are a pure function of the
//! configuration, the input files and the seed.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod sweep;

use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] proto_ope::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use proto_ope::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(
                E::NonFinite(_)
                | E::Divergence { .. }
                | E::ZeroWeightSum
                | E::ZeroPropensity { .. },
            ) => 3,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
