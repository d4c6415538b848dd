//! Building blocks shared by the commands and the sweep.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::info;
use proto_ope::behavior::Calibrated;
use proto_ope::classifier::NetClassifier;
use proto_ope::mdp::{estimate_mdp, policy_iteration};
use proto_ope::net::{ContextEncoding, InputFeaturizer};
use proto_ope::prototype::{self, CvResult, Lambdas};
use proto_ope::sepsis::{self, N_ACTIONS, N_STATES};
use proto_ope::{StochasticPolicy, TabularMdp, TrajectoryDataset};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{derive_seed, ExperimentConfig, TargetSpec};
use crate::model::{FittedModel, Network};
use crate::{CliError, Result};

pub const SPLITS: [&str; 3] = ["train", "calibration", "evaluation"];

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: TrajectoryDataset,
    pub calibration: TrajectoryDataset,
    pub evaluation: TrajectoryDataset,
}

/// The exact simulator MDP and the softened optimal policy that plays the
/// role of the unknown clinician.
pub fn true_behavior(epsilon: f64) -> Result<(TabularMdp, StochasticPolicy)> {
    let mdp = sepsis::exact_transition_tensor();
    let optimal = policy_iteration(&mdp, 1.0)?;
    let behavior = optimal.soften(epsilon)?;
    Ok((mdp, behavior))
}

/// Three splits of about the configured pair budgets, each from its own
/// generator.
pub fn generate_splits(
    config: &ExperimentConfig,
    behavior: &StochasticPolicy,
    horizon: usize,
    replication: usize,
) -> Result<Splits> {
    let budgets = [
        config.train_pairs,
        config.calibration_pairs,
        config.evaluation_pairs,
    ];
    let mut out = Vec::with_capacity(3);
    for (name, pairs) in SPLITS.iter().zip(budgets) {
        let mut rng = rng(derive_seed(config.seed, name, horizon, replication));
        out.push(sepsis::generate_pair_budget(
            behavior, pairs, horizon, &mut rng,
        )?);
    }
    let evaluation = out.pop().expect("three splits");
    let calibration = out.pop().expect("three splits");
    let train = out.pop().expect("three splits");
    Ok(Splits {
        train,
        calibration,
        evaluation,
    })
}

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn featurizer(train: &TrajectoryDataset) -> Result<InputFeaturizer> {
    Ok(InputFeaturizer::fit(
        ContextEncoding::Sepsis,
        N_ACTIONS,
        train,
    )?)
}

/// Policy iteration on the MDP estimated from `train`, softened.
pub fn learned_target(train: &TrajectoryDataset, epsilon: f64) -> Result<StochasticPolicy> {
    let estimated = estimate_mdp(train, N_STATES, N_ACTIONS)?;
    Ok(policy_iteration(&estimated, 1.0)?.soften(epsilon)?)
}

/// No treatment in any state.
pub fn zero_drug_target() -> StochasticPolicy {
    StochasticPolicy::deterministic(&[0; N_STATES], N_ACTIONS).expect("valid deterministic policy")
}

pub fn target_policy(
    config: &ExperimentConfig,
    train: &TrajectoryDataset,
) -> Result<StochasticPolicy> {
    match config.target {
        TargetSpec::ZeroDrug => Ok(zero_drug_target()),
        TargetSpec::Learned => learned_target(train, config.target_epsilon),
        TargetSpec::File => {
            let path = config
                .target_file
                .as_deref()
                .ok_or_else(|| CliError::Config("target_file: missing".into()))?;
            let policy: StochasticPolicy = read_json(path)?;
            policy.validate()?;
            if policy.n_states() != N_STATES || policy.n_actions() != N_ACTIONS {
                return Err(CliError::Config(format!(
                    "target_file: expected a {N_STATES} x {N_ACTIONS} policy, got {} x {}",
                    policy.n_states(),
                    policy.n_actions()
                )));
            }
            Ok(policy)
        }
    }
}

pub fn fit_feedforward(
    config: &ExperimentConfig,
    train: &TrajectoryDataset,
    calibration: &TrajectoryDataset,
    seed: u64,
) -> Result<FittedModel> {
    let network = NetClassifier::train(featurizer(train)?, train, &config.classifier_config(seed))?;
    let fitted = Calibrated::fit(network, calibration)?;
    Ok(FittedModel {
        network: Network::Feedforward(fitted.model),
        calibration: fitted.calibration,
    })
}

/// Prototype models with `n` prototypes for each prediction-prototype count
/// in `qs`. Training does not depend on `q`, so models sharing the same
/// hyperparameters share one training run and differ only in truncation
/// and calibration.
pub fn fit_prototypes(
    config: &ExperimentConfig,
    n: usize,
    qs: &[usize],
    train: &TrajectoryDataset,
    calibration: &TrajectoryDataset,
    seed: u64,
    cv: bool,
) -> Result<Vec<(FittedModel, Option<CvResult>)>> {
    let feat = featurizer(train)?;
    let base = config.prototype_config(n, qs[0], seed);
    let cv_results: Vec<Option<CvResult>> = if cv {
        let cv_base = prototype::TrainConfig {
            epochs: config.cv_epochs.unwrap_or(config.epochs),
            ..base.clone()
        };
        info!(
            "cross-validating {} grid points for n = {n}",
            config.cv_d_min.len() * config.cv_lambda_d.len()
        );
        prototype::cross_validate_qs(
            &feat,
            train,
            &cv_base,
            &config.cv_d_min,
            &config.cv_lambda_d,
            config.cv_folds,
            qs,
        )?
        .into_iter()
        .map(Some)
        .collect()
    } else {
        vec![None; qs.len()]
    };

    let mut trained: BTreeMap<(u64, u64), proto_ope::PrototypeModel> = BTreeMap::new();
    let mut out = Vec::with_capacity(qs.len());
    for (&q, cv_result) in qs.iter().zip(cv_results) {
        let (d_min, lambda_d) = cv_result
            .as_ref()
            .map_or((config.d_min, config.lambda_d), |r| {
                (r.best.d_min, r.best.lambda_d)
            });
        let key = (d_min.to_bits(), lambda_d.to_bits());
        if !trained.contains_key(&key) {
            let train_config = prototype::TrainConfig {
                d_min,
                lambdas: Lambdas {
                    diversity: lambda_d,
                    ..base.lambdas
                },
                ..base.clone()
            };
            info!("training prototype model n = {n}, d_min = {d_min}, lambda_d = {lambda_d}");
            trained.insert(key, prototype::train(feat.clone(), train, &train_config)?);
        }
        let mut model = trained[&key].clone();
        model.q = q;
        let fitted = Calibrated::fit(model, calibration)?;
        out.push((
            FittedModel {
                network: Network::Prototype(fitted.model),
                calibration: fitted.calibration,
            },
            cv_result,
        ));
    }
    Ok(out)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| CliError::io(path, e))?,
    ))
}

/// Runs `body` against a buffered writer at `path` and flushes it.
pub fn write_with<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = create(path)?;
    body(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(proto_ope::Error::from)?;
        writeln!(w).map_err(|e| CliError::io(path, e))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file)).map_err(proto_ope::Error::from)?)
}

pub fn write_jsonl(path: &Path, dataset: &TrajectoryDataset) -> Result<()> {
    write_with(path, |w| Ok(dataset.write_jsonl(w)?))
}

pub fn read_jsonl(path: &Path) -> Result<TrajectoryDataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(TrajectoryDataset::read_jsonl(BufReader::new(file))?)
}
