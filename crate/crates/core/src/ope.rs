//! Importance-sampling value estimates and their diagnostics.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{step_probs, ActionModel};
use crate::error::{Error, Result};
use crate::metrics::{quantile, quantile_sorted};
use crate::net::{History, Matrix};
use crate::prototype::PrototypeModel;
use crate::trajectory::{Trajectory, TrajectoryDataset};

/// Cumulative importance weights of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub trajectory: usize,
    /// `w_t` for `t = 0..len`: product of the step ratios up to and including `t`.
    pub partial_weights: Vec<f64>,
    pub full_weight: f64,
    pub reward: f64,
}

/// Weights of one trajectory from per-step target and behavior
/// distributions. Each step ratio is capped at `clip` when given.
pub fn importance_weights(
    id: usize,
    traj: &Trajectory,
    target: &[Vec<f64>],
    behavior: &[Vec<f64>],
    clip: Option<f64>,
) -> Result<WeightedSample> {
    if target.len() != traj.len() || behavior.len() != traj.len() {
        return Err(Error::DimensionMismatch {
            expected: traj.len(),
            actual: target.len().min(behavior.len()),
        });
    }
    let mut w = 1.0;
    let mut partial_weights = Vec::with_capacity(traj.len());
    for (t, &a) in traj.actions.iter().enumerate() {
        let mu = behavior[t][a];
        if mu == 0.0 {
            return Err(Error::ZeroPropensity {
                trajectory: id,
                step: t,
                action: a,
            });
        }
        let mut ratio = target[t][a] / mu;
        if let Some(c) = clip {
            ratio = ratio.min(c);
        }
        w *= ratio;
        partial_weights.push(w);
    }
    Ok(WeightedSample {
        trajectory: id,
        partial_weights,
        full_weight: w,
        reward: traj.reward(),
    })
}

/// Weights for every trajectory of `dataset`.
pub fn weighted_samples<T, B>(
    dataset: &TrajectoryDataset,
    target: &T,
    behavior: &B,
    clip: Option<f64>,
) -> Result<Vec<WeightedSample>>
where
    T: ActionModel + ?Sized,
    B: ActionModel + ?Sized,
{
    if let Some(c) = clip {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "clip must be positive, got {c}"
            )));
        }
    }
    let pi = step_probs(target, dataset)?;
    let mu = step_probs(behavior, dataset)?;
    dataset
        .iter()
        .enumerate()
        .map(|(i, tr)| importance_weights(i, tr, &pi[i], &mu[i], clip))
        .collect()
}

fn check_nonempty(samples: &[WeightedSample]) -> Result<()> {
    if samples.is_empty() {
        Err(Error::Empty("weighted samples"))
    } else {
        Ok(())
    }
}

/// `(1/m) Σ w_i r_i`.
pub fn is_value(samples: &[WeightedSample]) -> Result<f64> {
    check_nonempty(samples)?;
    Ok(samples
        .iter()
        .map(|s| s.full_weight * s.reward)
        .sum::<f64>()
        / samples.len() as f64)
}

/// `Σ w_i r_i / Σ w_i`.
pub fn wis_value(samples: &[WeightedSample]) -> Result<f64> {
    check_nonempty(samples)?;
    let total: f64 = samples.iter().map(|s| s.full_weight).sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeightSum);
    }
    Ok(samples
        .iter()
        .map(|s| s.full_weight * s.reward)
        .sum::<f64>()
        / total)
}

/// Effective sample size `(Σw)² / Σw²`.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Empty("weights"));
    }
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq == 0.0 {
        return Err(Error::ZeroWeightSum);
    }
    Ok(sum * sum / sum_sq)
}

pub fn full_weights(samples: &[WeightedSample]) -> Vec<f64> {
    samples.iter().map(|s| s.full_weight).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

impl WeightSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("weights"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(WeightSummary {
            min: sorted[0],
            q25: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q75: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
            mean: values.iter().sum::<f64>() / values.len() as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Is,
    Wis,
}

/// Machine-readable result of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: EstimatorKind,
    pub value: f64,
    pub ess: f64,
    pub m: usize,
    pub weights_summary: WeightSummary,
}

pub fn estimator_report(
    kind: EstimatorKind,
    samples: &[WeightedSample],
) -> Result<EstimatorReport> {
    let weights = full_weights(samples);
    Ok(EstimatorReport {
        estimator: kind,
        value: match kind {
            EstimatorKind::Is => is_value(samples)?,
            EstimatorKind::Wis => wis_value(samples)?,
        },
        ess: ess(&weights)?,
        m: samples.len(),
        weights_summary: WeightSummary::of(&weights)?,
    })
}

/// WIS on `n_boot` trajectory-level bootstrap resamples. Resamples whose
/// weights sum to zero are skipped.
pub fn bootstrap_wis<R: Rng + ?Sized>(
    samples: &[WeightedSample],
    n_boot: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_nonempty(samples)?;
    let m = samples.len();
    let mut out = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..m {
            let s = &samples[rng.gen_range(0..m)];
            num += s.full_weight * s.reward;
            den += s.full_weight;
        }
        if den > 0.0 {
            out.push(num / den);
        }
    }
    Ok(out)
}

/// A (history, action) pair the target may take but the behavior estimate
/// almost never does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapFlag {
    pub trajectory: usize,
    pub time: usize,
    pub context: usize,
    pub action: usize,
    pub target_prob: f64,
    pub behavior_prob: f64,
    pub nearest_prototype: Option<usize>,
    pub similarity: Option<f64>,
}

/// Flags sharing a nearest prototype (`None` for non-prototype estimators).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapGroup {
    pub prototype: Option<usize>,
    pub flags: Vec<OverlapFlag>,
}

/// Every visited history and every action with positive target probability
/// whose behavior probability falls below `threshold`, grouped by the
/// history's nearest prototype when `prototypes` is given.
pub fn overlap_report<T, B>(
    dataset: &TrajectoryDataset,
    target: &T,
    behavior: &B,
    threshold: f64,
    prototypes: Option<&PrototypeModel>,
) -> Result<Vec<OverlapGroup>>
where
    T: ActionModel + ?Sized,
    B: ActionModel + ?Sized,
{
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let pi = target.predict_dataset(dataset)?;
    let mu = behavior.predict_dataset(dataset)?;
    let nearest = match prototypes {
        Some(model) => Some(model.nearest_prototypes(&model.encode_dataset(dataset)?)?),
        None => None,
    };
    let mut flags = Vec::new();
    for (r, (i, t)) in dataset.steps().enumerate() {
        for a in 0..pi.cols() {
            let (p, q) = (pi.get(r, a), mu.get(r, a));
            if p > 0.0 && q < threshold {
                let near = nearest.as_ref().map(|n| n[r]);
                flags.push(OverlapFlag {
                    trajectory: i,
                    time: t,
                    context: dataset.trajectories[i].contexts[t],
                    action: a,
                    target_prob: p,
                    behavior_prob: q,
                    nearest_prototype: near.map(|n| n.0),
                    similarity: near.map(|n| n.1),
                });
            }
        }
    }
    flags.sort_by_key(|f| f.nearest_prototype);
    let mut groups: Vec<OverlapGroup> = Vec::new();
    for f in flags {
        match groups.last_mut() {
            Some(g) if g.prototype == f.nearest_prototype => g.flags.push(f),
            _ => groups.push(OverlapGroup {
                prototype: f.nearest_prototype,
                flags: vec![f],
            }),
        }
    }
    Ok(groups)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn write_overlap_csv<W: Write>(groups: &[OverlapGroup], mut w: W) -> Result<()> {
    writeln!(
        w,
        "prototype,trajectory,time,context,action,target_prob,behavior_prob,similarity"
    )?;
    for g in groups {
        for f in &g.flags {
            writeln!(
                w,
                "{},{},{},{},{},{:e},{:e},{}",
                opt(g.prototype),
                f.trajectory,
                f.time,
                f.context,
                f.action,
                f.target_prob,
                f.behavior_prob,
                opt(f.similarity.map(|s| format!("{s:e}")))
            )?;
        }
    }
    Ok(())
}

/// `p(J = j | h)` for each history.
pub fn assignment_probs(model: &PrototypeModel, histories: &[History<'_>]) -> Result<Matrix> {
    model.assignment_probs(&model.encode(histories)?)
}

/// Value of the target policy attributed to one prototype at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrototypeValue {
    pub prototype: usize,
    pub time: usize,
    /// `p̂_π(J_t = j)`.
    pub assignment: f64,
    /// `V̂_{j,t}`; `None` when the assignment probability is zero.
    pub value: Option<f64>,
    /// `(1/m) Σ_i p(J_t = j | h_t^i) W^i r^i`, equal to `value · assignment`.
    pub contribution: f64,
}

/// Prototype values at time `t`. Trajectories without a step `t` contribute
/// to neither the numerator nor the assignment mass.
pub fn prototype_values(
    dataset: &TrajectoryDataset,
    model: &PrototypeModel,
    samples: &[WeightedSample],
    t: usize,
) -> Result<Vec<PrototypeValue>> {
    check_nonempty(samples)?;
    if samples.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            actual: samples.len(),
        });
    }
    let reaching: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.trajectories[i].len() > t)
        .collect();
    let histories: Vec<History<'_>> = reaching
        .iter()
        .map(|&i| History::of(&dataset.trajectories[i], t))
        .collect();
    let n = model.n_prototypes();
    let m = samples.len() as f64;
    let mut mass = vec![0.0; n];
    let mut num = vec![0.0; n];
    if !histories.is_empty() {
        let p = assignment_probs(model, &histories)?;
        for (r, &i) in reaching.iter().enumerate() {
            let s = &samples[i];
            for j in 0..n {
                mass[j] += p.get(r, j) * s.partial_weights[t];
                num[j] += p.get(r, j) * s.full_weight * s.reward;
            }
        }
    }
    Ok((0..n)
        .map(|j| {
            let assignment = mass[j] / m;
            let contribution = num[j] / m;
            PrototypeValue {
                prototype: j,
                time: t,
                assignment,
                value: (assignment > 0.0).then(|| contribution / assignment),
                contribution,
            }
        })
        .collect())
}

pub fn write_prototype_values_csv<W: Write>(rows: &[PrototypeValue], mut w: W) -> Result<()> {
    writeln!(w, "time,prototype,assignment,value,contribution")?;
    for r in rows {
        let value = r
            .value
            .map_or_else(|| "undefined".to_string(), |v| format!("{v:e}"));
        writeln!(
            w,
            "{},{},{:e},{},{:e}",
            r.time, r.prototype, r.assignment, value, r.contribution
        )?;
    }
    Ok(())
}

/// Per-trajectory `Π_t μ(a_t|h_t) / μ̂(a_t|h_t)`, the ratio of weights under
/// the estimate and under the true behavior policy for any target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRatioDiagnostic {
    pub log_ratios: Vec<f64>,
    pub median_log_ratio: f64,
    pub iqr_log_ratio: f64,
    pub median_abs_log_ratio: f64,
}

pub fn weight_ratio_diagnostic<E, M>(
    dataset: &TrajectoryDataset,
    estimate: &E,
    truth: &M,
) -> Result<WeightRatioDiagnostic>
where
    E: ActionModel + ?Sized,
    M: ActionModel + ?Sized,
{
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let est = step_probs(estimate, dataset)?;
    let tru = step_probs(truth, dataset)?;
    let mut log_ratios = Vec::with_capacity(dataset.len());
    for (i, tr) in dataset.iter().enumerate() {
        let mut lr = 0.0;
        for (t, &a) in tr.actions.iter().enumerate() {
            if est[i][t][a] == 0.0 {
                return Err(Error::ZeroPropensity {
                    trajectory: i,
                    step: t,
                    action: a,
                });
            }
            lr += tru[i][t][a].ln() - est[i][t][a].ln();
        }
        log_ratios.push(lr);
    }
    let abs: Vec<f64> = log_ratios.iter().map(|v| v.abs()).collect();
    Ok(WeightRatioDiagnostic {
        median_log_ratio: quantile(&log_ratios, 0.5),
        iqr_log_ratio: quantile(&log_ratios, 0.75) - quantile(&log_ratios, 0.25),
        median_abs_log_ratio: quantile(&abs, 0.5),
        log_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Termination;

    fn sample(weights: &[f64], reward: f64) -> WeightedSample {
        WeightedSample {
            trajectory: 0,
            partial_weights: weights.to_vec(),
            full_weight: *weights.last().unwrap_or(&1.0),
            reward,
        }
    }

    fn traj(actions: Vec<usize>, reward: f64) -> Trajectory {
        let n = actions.len();
        let mut step_rewards = vec![0.0; n];
        step_rewards[n - 1] = reward;
        Trajectory {
            contexts: vec![0; n],
            actions,
            step_rewards,
            terminated: Termination::from_terminal_reward(reward),
            final_context: None,
        }
    }

    #[test]
    fn weight_products() {
        let tr = traj(vec![0, 1], 1.0);
        let s = importance_weights(
            0,
            &tr,
            &[vec![1.0, 0.0], vec![0.0, 0.75]],
            &[vec![0.5, 0.5], vec![0.75, 0.25]],
            None,
        )
        .unwrap();
        assert_eq!(s.partial_weights, vec![2.0, 6.0]);
        let clipped = importance_weights(
            0,
            &tr,
            &[vec![1.0, 0.0], vec![0.0, 0.75]],
            &[vec![0.5, 0.5], vec![0.75, 0.25]],
            Some(2.5),
        )
        .unwrap();
        assert_eq!(clipped.full_weight, 5.0);
    }

    #[test]
    fn zero_propensity_is_named() {
        let tr = traj(vec![1], 1.0);
        let err =
            importance_weights(4, &tr, &[vec![0.5, 0.5]], &[vec![1.0, 0.0]], None).unwrap_err();
        assert!(matches!(
            err,
            Error::ZeroPropensity {
                trajectory: 4,
                step: 0,
                action: 1
            }
        ));
    }

    #[test]
    fn estimator_examples() {
        assert_eq!(is_value(&[sample(&[2.0], -1.0)]).unwrap(), -2.0);
        assert_eq!(
            wis_value(&[sample(&[1.0], 0.0), sample(&[3.0], 1.0)]).unwrap(),
            0.75
        );
        assert!(matches!(
            wis_value(&[sample(&[0.0], 1.0)]),
            Err(Error::ZeroWeightSum)
        ));
        assert_eq!(ess(&[1.0, 3.0]).unwrap(), 1.6);
        assert_eq!(ess(&[0.0, 5.0, 0.0]).unwrap(), 1.0);
        assert_eq!(ess(&[2.0; 7]).unwrap(), 7.0);
    }

    #[test]
    fn identical_policies_give_unit_weights() {
        let pi = crate::mdp::StochasticPolicy::new(vec![vec![0.3, 0.7]]).unwrap();
        let ds = TrajectoryDataset::new(vec![traj(vec![0, 1, 1], 1.0), traj(vec![1], -1.0)]);
        let samples = weighted_samples(&ds, &pi, &pi, None).unwrap();
        assert!(samples
            .iter()
            .all(|s| s.partial_weights.iter().all(|&w| w == 1.0)));
        assert_eq!(wis_value(&samples).unwrap(), 0.0);
        let diag = weight_ratio_diagnostic(&ds, &pi, &pi).unwrap();
        assert!(diag.log_ratios.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overlap_flags_low_behavior_probability() {
        let target = crate::mdp::StochasticPolicy::new(vec![vec![1.0, 0.0]]).unwrap();
        let behavior = crate::mdp::StochasticPolicy::new(vec![vec![1e-9, 1.0 - 1e-9]]).unwrap();
        let ds = TrajectoryDataset::new(vec![traj(vec![1, 1], 1.0)]);
        let groups = overlap_report(&ds, &target, &behavior, 1e-3, None).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].flags.len(), 2);
        assert!(groups[0].flags.iter().all(|f| f.action == 0));
        assert!(overlap_report(&ds, &target, &target, 1e-6, None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn bootstrap_is_reproducible() {
        use rand::SeedableRng;
        let samples = vec![
            sample(&[1.0], 0.0),
            sample(&[3.0], 1.0),
            sample(&[0.5], -1.0),
        ];
        let a =
            bootstrap_wis(&samples, 20, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b =
            bootstrap_wis(&samples, 20, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
