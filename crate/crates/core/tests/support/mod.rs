//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proto_ope::net::{ContextEncoding, EncoderKind, History, InputFeaturizer};
use proto_ope::ope::{is_value, weighted_samples};
use proto_ope::prototype::Lambdas;
use proto_ope::{
    PrototypeModel, StochasticPolicy, TabularMdp, Termination, TrainConfig, Trajectory,
    TrajectoryDataset,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize, sparsity: f64) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < sparsity {
                    0.0
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            return raw.iter().map(|v| v / total).collect();
        }
    }
}

/// Random MDP whose last `n_terminal` states absorb. Rewards lie in {-1, 0, 1}
/// and the initial distribution avoids terminal states.
pub fn random_mdp(seed: u64, n_states: usize, n_actions: usize, n_terminal: usize) -> TabularMdp {
    let mut rng = rng(seed);
    let live = n_states - n_terminal;
    let transition: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|s| {
            (0..n_actions)
                .map(|_| {
                    if s >= live {
                        (0..n_states)
                            .map(|k| if k == s { 1.0 } else { 0.0 })
                            .collect()
                    } else {
                        random_distribution(&mut rng, n_states, 0.3)
                    }
                })
                .collect()
        })
        .collect();
    let reward = (0..n_states)
        .map(|_| [-1.0, 0.0, 1.0][rng.gen_range(0..3)])
        .collect();
    let terminal = (0..n_states).map(|s| s >= live).collect();
    let mut initial = random_distribution(&mut rng, live, 0.0);
    initial.resize(n_states, 0.0);
    TabularMdp::from_dense(&transition, reward, terminal, initial).expect("valid random MDP")
}

pub fn random_policy(seed: u64, n_states: usize, n_actions: usize) -> StochasticPolicy {
    let mut rng = rng(seed);
    StochasticPolicy::new(
        (0..n_states)
            .map(|_| random_distribution(&mut rng, n_actions, 0.0))
            .collect(),
    )
    .unwrap()
}

/// Discounted value of a deterministic policy by a direct linear solve.
pub fn deterministic_policy_value(mdp: &TabularMdp, actions: &[usize], discount: f64) -> Vec<f64> {
    let n = mdp.n_states();
    let dense = mdp.dense_transition();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        if mdp.is_terminal(s) {
            continue;
        }
        for (next, &p) in dense[s][actions[s]].iter().enumerate() {
            b[s] += p * mdp.reward()[next];
            if !mdp.is_terminal(next) {
                a[(s, next)] -= discount * p;
            }
        }
    }
    a.lu()
        .solve(&b)
        .expect("nonsingular policy system")
        .iter()
        .copied()
        .collect()
}

/// Pointwise maximum of the values of all `n_actions^n_states` deterministic policies.
pub fn brute_force_optimal_values(mdp: &TabularMdp, discount: f64) -> Vec<f64> {
    let (n, k) = (mdp.n_states(), mdp.n_actions());
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut actions = vec![0; n];
    loop {
        let v = deterministic_policy_value(mdp, &actions, discount);
        for s in 0..n {
            best[s] = best[s].max(v[s]);
        }
        // odometer increment
        let mut s = 0;
        while s < n && actions[s] == k - 1 {
            actions[s] = 0;
            s += 1;
        }
        if s == n {
            return best;
        }
        actions[s] += 1;
    }
}

/// A trajectory together with its probability under the generating policy.
pub struct Weighted {
    pub trajectory: Trajectory,
    pub prob: f64,
}

/// Every trajectory of at most `horizon` steps with positive probability
/// under `policy`, following the sampler's conventions.
pub fn enumerate_trajectories(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    horizon: usize,
) -> Vec<Weighted> {
    fn extend(
        mdp: &TabularMdp,
        policy: &StochasticPolicy,
        horizon: usize,
        prefix: &Trajectory,
        state: usize,
        prob: f64,
        out: &mut Vec<Weighted>,
    ) {
        for a in 0..mdp.n_actions() {
            let pa = policy.prob(state, a);
            if pa == 0.0 {
                continue;
            }
            for &(next, p) in mdp.row(state, a) {
                let mut t = prefix.clone();
                t.contexts.push(state);
                t.actions.push(a);
                t.step_rewards.push(mdp.reward()[next]);
                t.final_context = Some(next);
                let q = prob * pa * p;
                if mdp.is_terminal(next) {
                    t.terminated = Termination::from_terminal_reward(mdp.reward()[next]);
                    out.push(Weighted {
                        trajectory: t,
                        prob: q,
                    });
                } else if t.len() == horizon {
                    out.push(Weighted {
                        trajectory: t,
                        prob: q,
                    });
                } else {
                    extend(mdp, policy, horizon, &t, next, q, out);
                }
            }
        }
    }
    let empty = Trajectory {
        contexts: vec![],
        actions: vec![],
        step_rewards: vec![],
        terminated: Termination::CensoredAtHorizon,
        final_context: None,
    };
    let mut out = Vec::new();
    for (s, &p) in mdp.initial_dist().iter().enumerate() {
        if p > 0.0 {
            extend(mdp, policy, horizon, &empty, s, p, &mut out);
        }
    }
    out
}

/// `E_μ[V̂_IS]` for a single trajectory, summed exactly over all trajectories.
pub fn expected_is_estimate(
    mdp: &TabularMdp,
    target: &StochasticPolicy,
    behavior: &StochasticPolicy,
    horizon: usize,
) -> f64 {
    enumerate_trajectories(mdp, behavior, horizon)
        .into_iter()
        .map(|w| {
            let ds = TrajectoryDataset::new(vec![w.trajectory]);
            w.prob * is_value(&weighted_samples(&ds, target, behavior, None).unwrap()).unwrap()
        })
        .sum()
}

/// Expected return under `policy` by enumeration.
pub fn enumerated_value(mdp: &TabularMdp, policy: &StochasticPolicy, horizon: usize) -> f64 {
    enumerate_trajectories(mdp, policy, horizon)
        .iter()
        .map(|w| w.prob * w.trajectory.reward())
        .sum()
}

/// Pearson chi-square p-value; cells with expected count below 5 are pooled.
pub fn chi_square_p_value(observed: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    let (mut cells, mut pooled_o, mut pooled_e) = (Vec::new(), 0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * n as f64;
        if e < 5.0 {
            pooled_o += o as f64;
            pooled_e += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if pooled_e > 0.0 || pooled_o > 0.0 {
        cells.push((pooled_o, pooled_e));
    }
    if cells.len() < 2 {
        return 1.0;
    }
    let stat: f64 = cells
        .iter()
        .map(|&(o, e)| {
            if e == 0.0 {
                f64::INFINITY
            } else {
                (o - e).powi(2) / e
            }
        })
        .sum();
    let dist = ChiSquared::new((cells.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

/// Random trajectories over `n_contexts` contexts with outcomes in {-1, 0, 1}.
pub fn random_dataset(
    seed: u64,
    n_traj: usize,
    n_contexts: usize,
    n_actions: usize,
    max_len: usize,
) -> TrajectoryDataset {
    let mut rng = rng(seed);
    (0..n_traj)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            let reward = [-1.0, 0.0, 1.0][rng.gen_range(0..3)];
            let mut step_rewards = vec![0.0; len];
            step_rewards[len - 1] = reward;
            Trajectory {
                contexts: (0..len).map(|_| rng.gen_range(0..n_contexts)).collect(),
                actions: (0..len).map(|_| rng.gen_range(0..n_actions)).collect(),
                step_rewards,
                terminated: Termination::from_terminal_reward(reward),
                final_context: None,
            }
        })
        .collect()
}

/// A small untrained prototype model on one-hot contexts.
pub fn toy_model(
    seed: u64,
    dataset: &TrajectoryDataset,
    n_contexts: usize,
    n_actions: usize,
    n: usize,
    kind: EncoderKind,
    lambdas: Lambdas,
    d_min: f64,
) -> PrototypeModel {
    let featurizer =
        InputFeaturizer::fit(ContextEncoding::OneHot { n_contexts }, n_actions, dataset).unwrap();
    let config = TrainConfig {
        n,
        q: n.min(2),
        lambdas,
        d_min,
        encoder: kind,
        hidden: vec![5, 4],
        seed,
        ..Default::default()
    };
    PrototypeModel::init(featurizer, dataset, &config, &mut rng(seed)).unwrap()
}

/// Shifts every trainable parameter by uniform noise in `[-scale, scale]`,
/// moving the model off the exact zeros of its initialization.
pub fn jitter(model: &mut PrototypeModel, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let mut theta = model.trainable_params();
    for (_, m) in theta.iter_mut() {
        for v in m.data_mut() {
            *v += r.gen_range(-scale..scale);
        }
    }
    model.set_trainable(&theta).unwrap();
}

/// Largest relative gap between the analytic gradient of the full objective
/// and central differences with step `h`. Gaps are relative to the larger
/// magnitude of the two, floored at `floor`.
pub fn max_gradient_rel_error(
    model: &PrototypeModel,
    dataset: &TrajectoryDataset,
    h: f64,
    floor: f64,
) -> f64 {
    let steps: Vec<(usize, usize)> = dataset.steps().collect();
    let (_, grad) = model.objective_and_grad(dataset, &steps).unwrap();
    let theta = model.trainable_params();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = theta.names().cloned().collect();
    for name in names {
        let len = theta.get(&name).unwrap().data().len();
        for k in 0..len {
            let eval = |delta: f64| {
                let mut shifted = theta.clone();
                shifted.get_mut(&name).unwrap().data_mut()[k] += delta;
                let mut m = model.clone();
                m.set_trainable(&shifted).unwrap();
                m.objective(dataset, &steps).unwrap().total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let g = grad.get(&name).unwrap().data()[k];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(floor));
        }
    }
    worst
}

/// Prototype targets of a projection by exhaustive scan: each history is
/// encoded on its own and the first strictly closer prefix wins.
pub fn brute_force_projection(
    model: &PrototypeModel,
    dataset: &TrajectoryDataset,
) -> Vec<(usize, usize)> {
    let prefixes: Vec<(usize, usize, Vec<f64>)> = dataset
        .steps()
        .map(|(i, t)| {
            let z = model
                .encode(&[History::of(&dataset.trajectories[i], t)])
                .unwrap();
            (i, t, z.row(0).to_vec())
        })
        .collect();
    (0..model.n)
        .map(|j| {
            let p = model.latent_prototypes.row(j);
            let mut best = (f64::INFINITY, 0, 0);
            for (i, t, z) in &prefixes {
                let d: f64 = z.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, *i, *t);
                }
            }
            (best.1, best.2)
        })
        .collect()
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}
