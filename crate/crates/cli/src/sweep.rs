//! Estimation bias as a function of episode length.
//!
//! Each (horizon, replication) cell draws fresh splits, learns the target
//! from its training split, fits every estimator and compares importance
//! weights under the estimate with those under the true behavior policy.

use std::io::{self, Write};

use log::info;
use proto_ope::behavior::prediction_batch;
use proto_ope::mdp::exact_policy_value;
use proto_ope::metrics::{mean_nll, quantile};
use proto_ope::ope::{ess, full_weights, weight_ratio_diagnostic, weighted_samples, wis_value};
use proto_ope::{StochasticPolicy, TabularMdp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, ExperimentConfig, SweepEstimator};
use crate::model::FittedModel;
use crate::pipeline;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub horizon: usize,
    pub estimator: String,
    pub replication: usize,
    pub trajectories: usize,
    pub log_ratio_q10: f64,
    pub log_ratio_q25: f64,
    pub log_ratio_median: f64,
    pub log_ratio_q75: f64,
    pub log_ratio_q90: f64,
    pub median_abs_log_ratio: f64,
    /// The same statistic with the estimate replaced by the true policy.
    pub oracle_median_abs_log_ratio: f64,
    pub eval_nll: f64,
    pub v_true: f64,
    pub wis: f64,
    pub wis_true_behavior: f64,
    pub abs_error: f64,
    pub abs_error_true_behavior: f64,
    pub ess: f64,
}

const HEADER: &str =
    "horizon,estimator,replication,trajectories,log_ratio_q10,log_ratio_q25,log_ratio_median,\
log_ratio_q75,log_ratio_q90,median_abs_log_ratio,oracle_median_abs_log_ratio,eval_nll,v_true,wis,\
wis_true_behavior,abs_error,abs_error_true_behavior,ess";

/// Every (horizon, replication) cell of the configuration.
pub fn cells(config: &ExperimentConfig) -> Vec<(usize, usize)> {
    config
        .horizons
        .iter()
        .flat_map(|&h| (0..config.replications).map(move |r| (h, r)))
        .collect()
}

pub fn run(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    run_cells(config, &cells(config))
}

/// Runs the given cells concurrently; rows come back in cell order, then
/// in the configured estimator order.
pub fn run_cells(config: &ExperimentConfig, cells: &[(usize, usize)]) -> Result<Vec<SweepRow>> {
    let estimators = config.parsed_sweep_estimators()?;
    let (mdp, behavior) = pipeline::true_behavior(config.behavior_epsilon)?;
    let per_cell: Vec<Vec<SweepRow>> = cells
        .par_iter()
        .map(|&(h, rep)| run_cell(config, &estimators, &mdp, &behavior, h, rep))
        .collect::<Result<_>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

fn fit_all(
    config: &ExperimentConfig,
    estimators: &[SweepEstimator],
    splits: &pipeline::Splits,
    h: usize,
    rep: usize,
) -> Result<Vec<FittedModel>> {
    let mut fitted: Vec<Option<FittedModel>> = vec![None; estimators.len()];
    for (k, est) in estimators.iter().enumerate() {
        if fitted[k].is_some() {
            continue;
        }
        match *est {
            SweepEstimator::Feedforward => {
                let seed = derive_seed(config.seed, "fit:feedforward", h, rep);
                fitted[k] = Some(pipeline::fit_feedforward(
                    config,
                    &splits.train,
                    &splits.calibration,
                    seed,
                )?);
            }
            SweepEstimator::Prototype { n, .. } => {
                let group: Vec<usize> = (k..estimators.len())
                    .filter(|&j| matches!(estimators[j], SweepEstimator::Prototype { n: m, .. } if m == n))
                    .collect();
                let qs: Vec<usize> = group
                    .iter()
                    .map(|&j| match estimators[j] {
                        SweepEstimator::Prototype { q, .. } => q,
                        SweepEstimator::Feedforward => unreachable!(),
                    })
                    .collect();
                let seed = derive_seed(config.seed, &format!("fit:prototype:{n}"), h, rep);
                let models = pipeline::fit_prototypes(
                    config,
                    n,
                    &qs,
                    &splits.train,
                    &splits.calibration,
                    seed,
                    config.sweep_cv,
                )?;
                for (j, (model, _)) in group.into_iter().zip(models) {
                    fitted[j] = Some(model);
                }
            }
        }
    }
    Ok(fitted
        .into_iter()
        .map(|m| m.expect("every estimator fitted"))
        .collect())
}

fn run_cell(
    config: &ExperimentConfig,
    estimators: &[SweepEstimator],
    mdp: &TabularMdp,
    behavior: &StochasticPolicy,
    h: usize,
    rep: usize,
) -> Result<Vec<SweepRow>> {
    let splits = pipeline::generate_splits(config, behavior, h, rep)?;
    let target = pipeline::learned_target(&splits.train, config.target_epsilon)?;
    let v_true = exact_policy_value(mdp, &target, h)?;
    let evaluation = &splits.evaluation;
    let true_samples = weighted_samples(evaluation, &target, behavior, config.weight_clip)?;
    let wis_true_behavior = wis_value(&true_samples)?;
    let oracle = weight_ratio_diagnostic(evaluation, behavior, behavior)?.median_abs_log_ratio;

    let models = fit_all(config, estimators, &splits, h, rep)?;
    let mut rows = Vec::with_capacity(models.len());
    for (est, model) in estimators.iter().zip(&models) {
        let diag = weight_ratio_diagnostic(evaluation, model, behavior)?;
        let samples = weighted_samples(evaluation, &target, model, config.weight_clip)?;
        let wis = wis_value(&samples)?;
        let row = SweepRow {
            horizon: h,
            estimator: est.to_string(),
            replication: rep,
            trajectories: evaluation.len(),
            log_ratio_q10: quantile(&diag.log_ratios, 0.10),
            log_ratio_q25: quantile(&diag.log_ratios, 0.25),
            log_ratio_median: diag.median_log_ratio,
            log_ratio_q75: quantile(&diag.log_ratios, 0.75),
            log_ratio_q90: quantile(&diag.log_ratios, 0.90),
            median_abs_log_ratio: diag.median_abs_log_ratio,
            oracle_median_abs_log_ratio: oracle,
            eval_nll: mean_nll(&prediction_batch(model, evaluation)?),
            v_true,
            wis,
            wis_true_behavior,
            abs_error: (wis - v_true).abs(),
            abs_error_true_behavior: (wis_true_behavior - v_true).abs(),
            ess: ess(&full_weights(&samples))?,
        };
        info!(
            "h = {h}, rep = {rep}, {est}: median |log ratio| {:.3}, |WIS - V| {:.4}",
            row.median_abs_log_ratio, row.abs_error
        );
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_rows_csv<W: Write>(rows: &[SweepRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.horizon,
            r.estimator,
            r.replication,
            r.trajectories,
            r.log_ratio_q10,
            r.log_ratio_q25,
            r.log_ratio_median,
            r.log_ratio_q75,
            r.log_ratio_q90,
            r.median_abs_log_ratio,
            r.oracle_median_abs_log_ratio,
            r.eval_nll,
            r.v_true,
            r.wis,
            r.wis_true_behavior,
            r.abs_error,
            r.abs_error_true_behavior,
            r.ess
        )?;
    }
    Ok(())
}

/// Aggregate over replications of one (horizon, estimator) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub horizon: usize,
    pub estimator: String,
    pub replications: usize,
    /// Median across replications of the per-replication median |log ratio|.
    pub median_abs_log_ratio: f64,
    pub mean_abs_error: f64,
    pub sd_abs_error: f64,
    pub mean_abs_error_true_behavior: f64,
    pub sd_abs_error_true_behavior: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One summary per (horizon, estimator), in order of first appearance.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut keys: Vec<(usize, &str)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.horizon, r.estimator.as_str())) {
            keys.push((r.horizon, &r.estimator));
        }
    }
    keys.into_iter()
        .map(|(h, est)| {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.horizon == h && r.estimator == est)
                .collect();
            let pick = |f: fn(&SweepRow) -> f64| group.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (mean_abs_error, sd_abs_error) = mean_sd(&pick(|r| r.abs_error));
            let (mean_true, sd_true) = mean_sd(&pick(|r| r.abs_error_true_behavior));
            SweepSummary {
                horizon: h,
                estimator: est.to_string(),
                replications: group.len(),
                median_abs_log_ratio: quantile(&pick(|r| r.median_abs_log_ratio), 0.5),
                mean_abs_error,
                sd_abs_error,
                mean_abs_error_true_behavior: mean_true,
                sd_abs_error_true_behavior: sd_true,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(summary: &[SweepSummary], mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "horizon,estimator,replications,median_abs_log_ratio,mean_abs_error,sd_abs_error,\
mean_abs_error_true_behavior,sd_abs_error_true_behavior"
    )?;
    for s in summary {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.horizon,
            s.estimator,
            s.replications,
            s.median_abs_log_ratio,
            s.mean_abs_error,
            s.sd_abs_error,
            s.mean_abs_error_true_behavior,
            s.sd_abs_error_true_behavior
        )?;
    }
    Ok(())
}
