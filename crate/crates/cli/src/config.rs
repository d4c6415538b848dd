//! Experiment configuration: a flat TOML document, every key optional.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use proto_ope::classifier::ClassifierConfig;
use proto_ope::net::EncoderKind;
use proto_ope::net::{AdamConfig, DEFAULT_HIDDEN};
use proto_ope::prototype::{Lambdas, TrainConfig, DEFAULT_D_MIN_GRID, DEFAULT_LAMBDA_D_GRID};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorFamily {
    Feedforward,
    Prototype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSpec {
    /// Action 0 (no treatment) everywhere.
    ZeroDrug,
    /// Policy iteration on the MDP estimated from the training split, softened.
    Learned,
    /// A policy document at `target_file`.
    File,
}

/// One estimator of the bias sweep: `feedforward` or `prototype:<n>:<q>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SweepEstimator {
    Feedforward,
    Prototype { n: usize, q: usize },
}

impl fmt::Display for SweepEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepEstimator::Feedforward => write!(f, "feedforward"),
            SweepEstimator::Prototype { n, q } => write!(f, "prototype:{n}:{q}"),
        }
    }
}

impl FromStr for SweepEstimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "feedforward" {
            return Ok(SweepEstimator::Feedforward);
        }
        let parts: Vec<&str> = s.split(':').collect();
        if let ["prototype", n, q] = parts.as_slice() {
            let n: usize = n
                .parse()
                .map_err(|_| format!("bad prototype count in {s:?}"))?;
            let q: usize = q
                .parse()
                .map_err(|_| format!("bad prediction-prototype count in {s:?}"))?;
            if q == 0 || q > n {
                return Err(format!("{s:?}: need 1 <= q <= n"));
            }
            return Ok(SweepEstimator::Prototype { n, q });
        }
        Err(format!(
            "unknown estimator {s:?}; expected \"feedforward\" or \"prototype:<n>:<q>\""
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Episode cap for gen-data, fit-behavior and evaluate.
    pub horizon: usize,
    /// Episode caps visited by bias-sweep.
    pub horizons: Vec<usize>,
    pub behavior_epsilon: f64,
    pub target_epsilon: f64,
    pub train_pairs: usize,
    pub calibration_pairs: usize,
    pub evaluation_pairs: usize,

    pub estimator: EstimatorFamily,
    pub encoder: EncoderKind,
    pub hidden: Vec<usize>,
    pub n_prototypes: usize,
    pub prediction_prototypes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub projection_period: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub d_min: f64,
    pub lambda_d: f64,
    pub lambda_c: f64,
    pub lambda_e: f64,

    pub cv: bool,
    pub cv_folds: usize,
    pub cv_d_min: Vec<f64>,
    pub cv_lambda_d: Vec<f64>,
    /// Epochs per cross-validation fit; `epochs` when absent.
    pub cv_epochs: Option<usize>,

    pub target: TargetSpec,
    pub target_file: Option<PathBuf>,
    pub weight_clip: Option<f64>,
    pub value_bootstraps: usize,
    pub metric_bootstraps: usize,
    pub overlap_threshold: f64,
    pub prototype_times: Vec<usize>,

    pub replications: usize,
    pub sweep_estimators: Vec<String>,
    pub sweep_cv: bool,

    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            horizon: 15,
            horizons: vec![5, 10, 15, 20, 25, 30],
            behavior_epsilon: 0.1,
            target_epsilon: 0.01,
            train_pairs: 20_000,
            calibration_pairs: 20_000,
            evaluation_pairs: 20_000,
            estimator: EstimatorFamily::Prototype,
            encoder: EncoderKind::Feedforward,
            hidden: DEFAULT_HIDDEN.to_vec(),
            n_prototypes: 10,
            prediction_prototypes: 2,
            epochs: 400,
            batch_size: 1024,
            projection_period: 5,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            d_min: 1.0,
            lambda_d: 1e-3,
            lambda_c: 1e-3,
            lambda_e: 1e-3,
            cv: true,
            cv_folds: 3,
            cv_d_min: DEFAULT_D_MIN_GRID.to_vec(),
            cv_lambda_d: DEFAULT_LAMBDA_D_GRID.to_vec(),
            cv_epochs: None,
            target: TargetSpec::Learned,
            target_file: None,
            weight_clip: None,
            value_bootstraps: 100,
            metric_bootstraps: 1000,
            overlap_threshold: 1e-3,
            prototype_times: vec![0, 2],
            replications: 10,
            sweep_estimators: vec![
                "feedforward".into(),
                "prototype:10:2".into(),
                "prototype:10:5".into(),
                "prototype:100:5".into(),
            ],
            sweep_cv: false,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn field(name: &str, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Field-level checks; run before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.horizon == 0 {
            return Err(field("horizon", "must be at least 1"));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(field(
                "horizons",
                "must be a nonempty list of positive integers",
            ));
        }
        for (name, eps) in [
            ("behavior_epsilon", self.behavior_epsilon),
            ("target_epsilon", self.target_epsilon),
        ] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(field(name, format!("must lie in [0, 1], got {eps}")));
            }
        }
        for (name, n) in [
            ("train_pairs", self.train_pairs),
            ("calibration_pairs", self.calibration_pairs),
            ("evaluation_pairs", self.evaluation_pairs),
            ("batch_size", self.batch_size),
            ("projection_period", self.projection_period),
            ("replications", self.replications),
            ("n_prototypes", self.n_prototypes),
            ("prediction_prototypes", self.prediction_prototypes),
        ] {
            if n == 0 {
                return Err(field(name, "must be at least 1"));
            }
        }
        if self.prediction_prototypes > self.n_prototypes {
            return Err(field(
                "prediction_prototypes",
                "must not exceed n_prototypes",
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(field(
                "hidden",
                "must be a nonempty list of positive layer widths",
            ));
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("d_min", self.d_min)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(field(name, "must be positive"));
            }
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("lambda_d", self.lambda_d),
            ("lambda_c", self.lambda_c),
            ("lambda_e", self.lambda_e),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(field(name, "must be non-negative"));
            }
        }
        if self.cv_folds < 2 {
            return Err(field("cv_folds", "must be at least 2"));
        }
        if self.cv_d_min.is_empty() || self.cv_d_min.iter().any(|&d| !(d > 0.0)) {
            return Err(field(
                "cv_d_min",
                "must be a nonempty list of positive values",
            ));
        }
        if self.cv_lambda_d.is_empty() || self.cv_lambda_d.iter().any(|&l| !(l >= 0.0)) {
            return Err(field(
                "cv_lambda_d",
                "must be a nonempty list of non-negative values",
            ));
        }
        if self.target == TargetSpec::File && self.target_file.is_none() {
            return Err(field("target_file", "required when target = \"file\""));
        }
        if let Some(c) = self.weight_clip {
            if !(c > 0.0) {
                return Err(field("weight_clip", "must be positive"));
            }
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold < 1.0) {
            return Err(field("overlap_threshold", "must lie in (0, 1)"));
        }
        if self.value_bootstraps == 0 || self.metric_bootstraps == 0 {
            return Err(field(
                "value_bootstraps/metric_bootstraps",
                "must be at least 1",
            ));
        }
        if self.sweep_estimators.is_empty() {
            return Err(field("sweep_estimators", "must not be empty"));
        }
        self.parsed_sweep_estimators()?;
        Ok(())
    }

    pub fn parsed_sweep_estimators(&self) -> Result<Vec<SweepEstimator>, CliError> {
        self.sweep_estimators
            .iter()
            .map(|s| s.parse().map_err(|e| field("sweep_estimators", e)))
            .collect()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn prototype_config(&self, n: usize, q: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            n,
            q,
            lambdas: Lambdas {
                diversity: self.lambda_d,
                clustering: self.lambda_c,
                evidence: self.lambda_e,
            },
            d_min: self.d_min,
            epochs: self.epochs,
            batch_size: self.batch_size,
            projection_period: self.projection_period,
            seed,
            encoder: self.encoder,
            hidden: self.hidden.clone(),
            adam: self.adam(),
        }
    }

    pub fn classifier_config(&self, seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            encoder: self.encoder,
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            adam: self.adam(),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(canonical.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent seed for one named stream of one (horizon, replication) cell.
pub fn derive_seed(base: u64, stream: &str, horizon: usize, replication: usize) -> u64 {
    let digest = Sha256::digest(format!("{base}/{stream}/{horizon}/{replication}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(
            ExperimentConfig::from_toml("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn unknown_and_invalid_fields_are_named() {
        let err = ExperimentConfig::from_toml("horizn = 3")
            .unwrap_err()
            .to_string();
        assert!(err.contains("horizn"), "{err}");
        let err = ExperimentConfig::from_toml("train_pairs = 0")
            .unwrap_err()
            .to_string();
        assert!(err.contains("train_pairs"), "{err}");
        let err = ExperimentConfig::from_toml("sweep_estimators = [\"prototype:2:5\"]")
            .unwrap_err()
            .to_string();
        assert!(err.contains("sweep_estimators"), "{err}");
        let err = ExperimentConfig::from_toml("behavior_epsilon = \"high\"")
            .unwrap_err()
            .to_string();
        assert!(err.contains("behavior_epsilon"), "{err}");
    }

    #[test]
    fn estimator_names_round_trip() {
        for s in ["feedforward", "prototype:10:2", "prototype:100:5"] {
            assert_eq!(s.parse::<SweepEstimator>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn seeds_differ_by_stream_and_cell() {
        let a = derive_seed(1, "train", 5, 0);
        assert_ne!(a, derive_seed(1, "calibration", 5, 0));
        assert_ne!(a, derive_seed(1, "train", 10, 0));
        assert_ne!(a, derive_seed(1, "train", 5, 1));
        assert_eq!(a, derive_seed(1, "train", 5, 0));
    }
}
