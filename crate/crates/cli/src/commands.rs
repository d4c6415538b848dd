//! The subcommands. Each reads from and writes to `config.output_dir`.

use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use proto_ope::behavior::prediction_batch;
use proto_ope::mdp::exact_policy_value;
use proto_ope::metrics::{mean_nll, metric_report, MetricReport};
use proto_ope::ope::{
    bootstrap_wis, estimator_report, is_value, overlap_report, prototype_values,
    weight_ratio_diagnostic, weighted_samples, write_overlap_csv, write_prototype_values_csv,
    EstimatorKind, EstimatorReport, WeightSummary,
};
use proto_ope::prototype::{write_encodings_csv, write_report_csv, CvResult};
use proto_ope::sepsis::N_ACTIONS;
use proto_ope::StochasticPolicy;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, EstimatorFamily, ExperimentConfig, TargetSpec};
use crate::manifest::RunManifest;
use crate::model::FittedModel;
use crate::pipeline::{self, read_json, read_jsonl, write_json, write_jsonl, write_with, SPLITS};
use crate::{CliError, Result};

pub const BOOTSTRAP_SCHEME: &str =
    "trajectory bootstrap: m trajectories resampled with replacement, WIS recomputed";

pub fn data_path(out: &Path, split: &str) -> PathBuf {
    out.join("data").join(format!("{split}.jsonl"))
}

/// Relative artifact paths for the manifest.
fn relative(out: &Path, paths: &[PathBuf]) -> Vec<PathBuf> {
    paths
        .iter()
        .map(|p| p.strip_prefix(out).unwrap_or(p).to_path_buf())
        .collect()
}

fn finish(mut manifest: RunManifest, out: &Path, artifacts: &[PathBuf]) -> Result<()> {
    manifest.artifacts = relative(out, artifacts);
    let path = manifest.finish(out)?;
    info!("wrote {}", path.display());
    Ok(())
}

/// Simulates the three splits under the softened optimal policy.
pub fn gen_data(config: &ExperimentConfig) -> Result<()> {
    let manifest = RunManifest::start("gen-data", config);
    let out = &config.output_dir;
    let (_, behavior) = pipeline::true_behavior(config.behavior_epsilon)?;
    let splits = pipeline::generate_splits(config, &behavior, config.horizon, 0)?;
    let mut artifacts = Vec::new();
    for (name, ds) in SPLITS
        .iter()
        .zip([&splits.train, &splits.calibration, &splits.evaluation])
    {
        let path = data_path(out, name);
        write_jsonl(&path, ds)?;
        info!("{name}: {} trajectories, {} pairs", ds.len(), ds.n_pairs());
        artifacts.push(path);
    }
    let path = out.join("behavior_policy.json");
    write_json(&path, &behavior)?;
    artifacts.push(path);
    finish(manifest, out, &artifacts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub estimator: String,
    /// Calibrated predictions on the evaluation split.
    pub evaluation: MetricReport,
    pub uncalibrated_nll: f64,
    /// NLL of the uniform policy, `ln k`.
    pub uniform_nll: f64,
    pub pairs: usize,
}

/// Trains, calibrates and scores the configured estimator.
pub fn fit_behavior(config: &ExperimentConfig) -> Result<()> {
    let manifest = RunManifest::start("fit-behavior", config);
    let out = &config.output_dir;
    let train = read_jsonl(&data_path(out, "train"))?;
    let calibration = read_jsonl(&data_path(out, "calibration"))?;
    let evaluation = read_jsonl(&data_path(out, "evaluation"))?;
    let seed = derive_seed(config.seed, "fit", config.horizon, 0);

    let (fitted, cv): (FittedModel, Option<CvResult>) = match config.estimator {
        EstimatorFamily::Feedforward => (
            pipeline::fit_feedforward(config, &train, &calibration, seed)?,
            None,
        ),
        EstimatorFamily::Prototype => pipeline::fit_prototypes(
            config,
            config.n_prototypes,
            &[config.prediction_prototypes],
            &train,
            &calibration,
            seed,
            config.cv,
        )?
        .remove(0),
    };
    if let Some(model) = fitted.prototype() {
        let unreal = model.unreal_prototypes()?;
        if !unreal.is_empty() {
            return Err(proto_ope::Error::NonFinite(format!(
                "prototypes {unreal:?} are not training encodings"
            ))
            .into());
        }
    }

    let batch = prediction_batch(&fitted, &evaluation)?;
    let raw = prediction_batch(&fitted.network, &evaluation)?;
    let mut rng = pipeline::rng(derive_seed(config.seed, "metrics", config.horizon, 0));
    let doc = MetricsDocument {
        estimator: fitted.estimator().to_string(),
        evaluation: metric_report(&batch, config.metric_bootstraps, &mut rng)?,
        uncalibrated_nll: mean_nll(&raw),
        uniform_nll: (N_ACTIONS as f64).ln(),
        pairs: batch.len(),
    };
    info!(
        "evaluation NLL {:.4} (uniform {:.4})",
        doc.evaluation.nll, doc.uniform_nll
    );

    let mut artifacts = vec![out.join("model.json"), out.join("metrics.json")];
    write_json(&artifacts[0], &fitted)?;
    write_json(&artifacts[1], &doc)?;
    if let Some(cv) = cv {
        artifacts.push(out.join("cv.json"));
        write_json(&artifacts[2], &cv)?;
    }
    finish(manifest, out, &artifacts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatePair {
    pub is_value: f64,
    pub weight_sum: f64,
    /// Absent when the weights sum to zero, which leaves WIS and ESS undefined.
    pub is: Option<EstimatorReport>,
    pub wis: Option<EstimatorReport>,
}

impl EstimatePair {
    pub fn wis_value(&self) -> Option<f64> {
        self.wis.as_ref().map(|r| r.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub scheme: String,
    pub requested: usize,
    /// Resamples whose weights summed to zero are dropped.
    pub valid: usize,
    pub summary: Option<WeightSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub target: TargetSpec,
    pub horizon: usize,
    pub exact_value: f64,
    pub estimated_behavior: EstimatePair,
    pub true_behavior: Option<EstimatePair>,
    pub wis_abs_error: Option<f64>,
    pub wis_abs_error_true_behavior: Option<f64>,
    pub median_abs_log_weight_ratio: Option<f64>,
    pub bootstrap: BootstrapSummary,
    pub weight_clip: Option<f64>,
}

fn estimates(samples: &[proto_ope::ope::WeightedSample]) -> Result<EstimatePair> {
    let weight_sum: f64 = samples.iter().map(|s| s.full_weight).sum();
    let defined = weight_sum > 0.0;
    Ok(EstimatePair {
        is_value: is_value(samples)?,
        weight_sum,
        is: if defined {
            Some(estimator_report(EstimatorKind::Is, samples)?)
        } else {
            None
        },
        wis: if defined {
            Some(estimator_report(EstimatorKind::Wis, samples)?)
        } else {
            None
        },
    })
}

/// Off-policy value of the target on the evaluation split.
pub fn evaluate(config: &ExperimentConfig) -> Result<()> {
    let manifest = RunManifest::start("evaluate", config);
    let out = &config.output_dir;
    let fitted: FittedModel = read_json(&out.join("model.json"))?;
    let train = read_jsonl(&data_path(out, "train"))?;
    let evaluation = read_jsonl(&data_path(out, "evaluation"))?;
    let behavior_path = out.join("behavior_policy.json");
    let true_behavior: Option<StochasticPolicy> = if behavior_path.exists() {
        Some(read_json(&behavior_path)?)
    } else {
        None
    };

    let target = pipeline::target_policy(config, &train)?;
    let mdp = proto_ope::sepsis::exact_transition_tensor();
    let exact_value = exact_policy_value(&mdp, &target, config.horizon)?;

    let samples = weighted_samples(&evaluation, &target, &fitted, config.weight_clip)?;
    let estimated_behavior = estimates(&samples)?;
    let true_samples = match &true_behavior {
        Some(mu) => Some(weighted_samples(
            &evaluation,
            &target,
            mu,
            config.weight_clip,
        )?),
        None => None,
    };
    let true_pair = true_samples.as_deref().map(estimates).transpose()?;
    let ratio = match &true_behavior {
        Some(mu) => Some(weight_ratio_diagnostic(&evaluation, &fitted, mu)?.median_abs_log_ratio),
        None => None,
    };

    let mut rng = pipeline::rng(derive_seed(config.seed, "bootstrap", config.horizon, 0));
    let boot = bootstrap_wis(&samples, config.value_bootstraps, &mut rng)?;
    let report = ValueReport {
        target: config.target,
        horizon: config.horizon,
        exact_value,
        wis_abs_error: estimated_behavior
            .wis_value()
            .map(|v| (v - exact_value).abs()),
        wis_abs_error_true_behavior: true_pair
            .as_ref()
            .and_then(|p| p.wis_value())
            .map(|v| (v - exact_value).abs()),
        estimated_behavior,
        true_behavior: true_pair,
        median_abs_log_weight_ratio: ratio,
        bootstrap: BootstrapSummary {
            scheme: BOOTSTRAP_SCHEME.to_string(),
            requested: config.value_bootstraps,
            valid: boot.len(),
            summary: if boot.is_empty() {
                None
            } else {
                Some(WeightSummary::of(&boot)?)
            },
        },
        weight_clip: config.weight_clip,
    };
    match report.estimated_behavior.wis_value() {
        Some(v) => info!("exact value {:.4}, WIS {v:.4}", report.exact_value),
        None => log::warn!("importance weights sum to zero; WIS is undefined"),
    }

    let mut artifacts = vec![
        out.join("value_report.json"),
        out.join("bootstrap_wis.csv"),
        out.join("overlap.csv"),
        out.join("target_policy.json"),
    ];
    write_json(&artifacts[0], &report)?;
    write_with(&artifacts[1], |w| {
        writeln!(w, "resample,wis").map_err(|e| CliError::io(&artifacts[1], e))?;
        for (b, v) in boot.iter().enumerate() {
            writeln!(w, "{b},{v:e}").map_err(|e| CliError::io(&artifacts[1], e))?;
        }
        Ok(())
    })?;
    let overlap = overlap_report(
        &evaluation,
        &target,
        &fitted,
        config.overlap_threshold,
        fitted.prototype(),
    )?;
    write_with(&artifacts[2], |w| Ok(write_overlap_csv(&overlap, w)?))?;
    write_json(&artifacts[3], &target)?;

    if let Some(model) = fitted.prototype() {
        let report_path = out.join("prototype_report.csv");
        write_with(&report_path, |w| {
            Ok(write_report_csv(&model.prototype_report()?, w)?)
        })?;
        let mut rows = Vec::new();
        for &t in &config.prototype_times {
            rows.extend(prototype_values(&evaluation, model, &samples, t)?);
        }
        let values_path = out.join("prototype_values.csv");
        write_with(&values_path, |w| Ok(write_prototype_values_csv(&rows, w)?))?;
        artifacts.extend([report_path, values_path]);
    }
    finish(manifest, out, &artifacts)
}

/// Prototype summary and latent encodings of the evaluation split.
pub fn proto_report(config: &ExperimentConfig) -> Result<()> {
    let manifest = RunManifest::start("proto-report", config);
    let out = &config.output_dir;
    let fitted: FittedModel = read_json(&out.join("model.json"))?;
    let model = fitted.prototype().ok_or_else(|| {
        CliError::Config("estimator: proto-report needs a prototype model in model.json".into())
    })?;
    let evaluation = read_jsonl(&data_path(out, "evaluation"))?;
    let artifacts = vec![out.join("prototype_report.csv"), out.join("encodings.csv")];
    write_with(&artifacts[0], |w| {
        Ok(write_report_csv(&model.prototype_report()?, w)?)
    })?;
    write_with(&artifacts[1], |w| {
        Ok(write_encodings_csv(model, &evaluation, w)?)
    })?;
    finish(manifest, out, &artifacts)
}

/// Writes the per-replication and summary CSVs of the bias sweep.
pub fn bias_sweep(config: &ExperimentConfig) -> Result<()> {
    let manifest = RunManifest::start("bias-sweep", config);
    let out = &config.output_dir;
    let rows = crate::sweep::run(config)?;
    let artifacts = vec![
        out.join("bias_sweep.csv"),
        out.join("bias_sweep_summary.csv"),
    ];
    write_with(&artifacts[0], |w| {
        crate::sweep::write_rows_csv(&rows, w).map_err(|e| CliError::io(&artifacts[0], e))
    })?;
    let summary = crate::sweep::summarize(&rows);
    write_with(&artifacts[1], |w| {
        crate::sweep::write_summary_csv(&summary, w).map_err(|e| CliError::io(&artifacts[1], e))
    })?;
    finish(manifest, out, &artifacts)
}
