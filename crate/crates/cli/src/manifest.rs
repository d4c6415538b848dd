//! Run manifests: what was run, with which configuration, producing what.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Paths relative to the output directory.
    pub artifacts: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: &str, config: &ExperimentConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            config: config.clone(),
            artifacts: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    /// Stamps the finish time and writes `manifests/<command>.json`.
    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.finished_unix = unix_now();
        let dir = out_dir.join("manifests");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let path = dir.join(format!("{}.json", self.command));
        let text = serde_json::to_string_pretty(&self).map_err(proto_ope::Error::from)?;
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
