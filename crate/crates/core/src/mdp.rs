//! Tabular MDPs: exact solvers, policy softening, estimation from logged
//! trajectories and exact finite-horizon policy values.
//!
//! Rewards are attached to states and collected when a state is entered from
//! a nonterminal state. Terminal states self-loop and collect nothing further,
//! so a terminal state always has value zero.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Termination, Trajectory, TrajectoryDataset};

const STOCHASTIC_TOL: f64 = 1e-9;
/// Sweep cap for value iteration.
pub const MAX_SWEEPS: usize = 10_000;
/// Improvement-round cap for policy iteration.
pub const MAX_IMPROVEMENT_ROUNDS: usize = 1_000;
/// A state's action is only replaced when the challenger is better by this much.
const IMPROVEMENT_TOL: f64 = 1e-11;

/// Sparse transition row: `(next_state, probability)` sorted by next state.
pub type TransitionRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    rows: Vec<TransitionRow>,
    reward: Vec<f64>,
    terminal: Vec<bool>,
    initial_dist: Vec<f64>,
}

impl TabularMdp {
    /// Builds and validates an MDP from sparse rows indexed by `s * n_actions + a`.
    pub fn from_rows(
        n_states: usize,
        n_actions: usize,
        rows: Vec<TransitionRow>,
        reward: Vec<f64>,
        terminal: Vec<bool>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let mut rows = rows;
        for row in &mut rows {
            row.sort_by_key(|&(s, _)| s);
            row.retain(|&(_, p)| p != 0.0);
        }
        let mdp = TabularMdp {
            n_states,
            n_actions,
            rows,
            reward,
            terminal,
            initial_dist,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Builds an MDP from a dense `P[s][a][s']` tensor.
    pub fn from_dense(
        transition: &[Vec<Vec<f64>>],
        reward: Vec<f64>,
        terminal: Vec<bool>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(n_states * n_actions);
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::InvalidMdp(format!(
                    "state {s} has {} actions",
                    per_action.len()
                )));
            }
            for dist in per_action {
                if dist.len() != n_states {
                    return Err(Error::DimensionMismatch {
                        expected: n_states,
                        actual: dist.len(),
                    });
                }
                rows.push(
                    dist.iter()
                        .copied()
                        .enumerate()
                        .filter(|&(_, p)| p != 0.0)
                        .collect(),
                );
            }
        }
        Self::from_rows(n_states, n_actions, rows, reward, terminal, initial_dist)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidMdp(
                "state and action counts must be positive".into(),
            ));
        }
        if self.rows.len() != ns * na {
            return Err(Error::InvalidMdp(format!(
                "expected {} transition rows, got {}",
                ns * na,
                self.rows.len()
            )));
        }
        if self.reward.len() != ns || self.terminal.len() != ns || self.initial_dist.len() != ns {
            return Err(Error::InvalidMdp(
                "reward, terminal and initial_dist must have one entry per state".into(),
            ));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.row(s, a);
                let mut total = 0.0;
                for &(next, p) in row {
                    if next >= ns || !(p >= 0.0) || !p.is_finite() {
                        return Err(Error::InvalidMdp(format!(
                            "bad entry P[{s}][{a}][{next}] = {p}"
                        )));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidMdp(format!("P[{s}][{a}] sums to {total}")));
                }
                if self.terminal[s] && !(row.len() == 1 && row[0].0 == s) {
                    return Err(Error::InvalidMdp(format!(
                        "terminal state {s} does not self-loop under action {a}"
                    )));
                }
            }
        }
        if self.initial_dist.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidMdp("negative initial probability".into()));
        }
        let init: f64 = self.initial_dist.iter().sum();
        if (init - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidMdp(format!("initial_dist sums to {init}")));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.rows[state * self.n_actions + action]
    }

    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        let row = self.row(state, action);
        row.binary_search_by_key(&next, |&(s, _)| s)
            .map_or(0.0, |i| row[i].1)
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// Dense `P[s][a][s']`.
    pub fn dense_transition(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| {
                        let mut dense = vec![0.0; self.n_states];
                        for &(next, p) in self.row(s, a) {
                            dense[next] = p;
                        }
                        dense
                    })
                    .collect()
            })
            .collect()
    }

    /// Expected one-step return of `action` in `state` given continuation values.
    pub fn lookahead(&self, state: usize, action: usize, values: &[f64], discount: f64) -> f64 {
        self.row(state, action)
            .iter()
            .map(|&(next, p)| {
                let cont = if self.terminal[next] {
                    0.0
                } else {
                    values[next]
                };
                p * (self.reward[next] + discount * cont)
            })
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MdpDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// JSON wire form of a [`TabularMdp`] with a dense transition tensor.
#[derive(Debug, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<f64>,
    pub terminal: Vec<bool>,
    pub initial_dist: Vec<f64>,
}

impl From<&TabularMdp> for MdpDocument {
    fn from(m: &TabularMdp) -> Self {
        MdpDocument {
            n_states: m.n_states,
            n_actions: m.n_actions,
            transition: m.dense_transition(),
            reward: m.reward.clone(),
            terminal: m.terminal.clone(),
            initial_dist: m.initial_dist.clone(),
        }
    }
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        if doc.transition.len() != doc.n_states {
            return Err(Error::DimensionMismatch {
                expected: doc.n_states,
                actual: doc.transition.len(),
            });
        }
        let mdp =
            TabularMdp::from_dense(&doc.transition, doc.reward, doc.terminal, doc.initial_dist)?;
        if mdp.n_actions != doc.n_actions {
            return Err(Error::DimensionMismatch {
                expected: doc.n_actions,
                actual: mdp.n_actions,
            });
        }
        Ok(mdp)
    }
}

/// Per-state distribution over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    probs: Vec<Vec<f64>>,
}

impl StochasticPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        let policy = StochasticPolicy { probs };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        let n_actions = self.n_actions();
        if self.probs.is_empty() || n_actions == 0 {
            return Err(Error::InvalidPolicy(
                "policy has no states or no actions".into(),
            ));
        }
        for (s, row) in self.probs.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidPolicy(format!(
                    "row {s} has {} entries",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidPolicy(format!(
                    "row {s} has a negative or non-finite entry"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {total}")));
            }
        }
        Ok(())
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let probs = actions
            .iter()
            .map(|&a| {
                if a >= n_actions {
                    return Err(Error::InvalidPolicy(format!("action {a} out of range")));
                }
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(probs)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        StochasticPolicy {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state][action]
    }

    /// Most probable action per state, lowest index on ties.
    pub fn greedy_actions(&self) -> Vec<usize> {
        self.probs.iter().map(|row| argmax(row)).collect()
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs
            .iter()
            .all(|row| row.iter().all(|&p| p == 0.0 || p == 1.0))
    }

    /// Mixes every row with the uniform distribution:
    /// `(1 - epsilon) * p + epsilon / n_actions`.
    pub fn soften(&self, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!(
                "softening epsilon {epsilon} outside [0, 1]"
            )));
        }
        let floor = epsilon / self.n_actions() as f64;
        let probs = self
            .probs
            .iter()
            .map(|row| row.iter().map(|&p| (1.0 - epsilon) * p + floor).collect())
            .collect();
        Ok(StochasticPolicy { probs })
    }

    fn check_against(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states() != mdp.n_states() || self.n_actions() != mdp.n_actions() {
            return Err(Error::InvalidPolicy(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states(),
                self.n_actions(),
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// Free-function form of [`StochasticPolicy::soften`].
pub fn soften(policy: &StochasticPolicy, epsilon: f64) -> Result<StochasticPolicy> {
    policy.soften(epsilon)
}

/// State values together with a greedy action per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateValues {
    pub values: Vec<f64>,
    pub greedy: Vec<usize>,
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_discount(discount: f64) -> Result<()> {
    if !(discount > 0.0 && discount <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "discount {discount} outside (0, 1]"
        )));
    }
    Ok(())
}

fn greedy_actions(mdp: &TabularMdp, values: &[f64], discount: f64) -> Vec<usize> {
    (0..mdp.n_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                return 0;
            }
            let q: Vec<f64> = (0..mdp.n_actions())
                .map(|a| mdp.lookahead(s, a, values, discount))
                .collect();
            argmax(&q)
        })
        .collect()
}

/// Value iteration to a sup-norm Bellman residual of at most `tol`.
pub fn value_iteration(mdp: &TabularMdp, discount: f64, tol: f64) -> Result<StateValues> {
    check_discount(discount)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let mut values = vec![0.0; mdp.n_states()];
    for _ in 0..MAX_SWEEPS {
        let next: Vec<f64> = (0..mdp.n_states())
            .map(|s| {
                if mdp.is_terminal(s) {
                    0.0
                } else {
                    (0..mdp.n_actions())
                        .map(|a| mdp.lookahead(s, a, &values, discount))
                        .fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        let change = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if !change.is_finite() {
            break;
        }
        if change * discount <= tol {
            let greedy = greedy_actions(mdp, &values, discount);
            return Ok(StateValues { values, greedy });
        }
    }
    Err(Error::Divergence {
        solver: "value iteration",
        reason: format!("no convergence within {MAX_SWEEPS} sweeps"),
    })
}

/// Exact evaluation of a stochastic policy by a direct linear solve.
///
/// Without discounting, nonterminal states from which no terminal state is
/// reachable have value zero when they never collect reward; otherwise their
/// return is unbounded and evaluation fails.
pub fn evaluate_policy(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    discount: f64,
) -> Result<Vec<f64>> {
    check_discount(discount)?;
    policy.check_against(mdp)?;
    let n = mdp.n_states();
    let mut reward = vec![0.0; n];
    let mut succ: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut exits = vec![false; n];
    for s in (0..n).filter(|&s| !mdp.is_terminal(s)) {
        for (a, &pa) in policy.row(s).iter().enumerate().filter(|&(_, &p)| p > 0.0) {
            for &(next, p) in mdp.row(s, a) {
                reward[s] += pa * p * mdp.reward[next];
                if mdp.is_terminal(next) {
                    exits[s] = true;
                } else {
                    succ[s].push((next, pa * p));
                }
            }
        }
    }

    // states whose value enters the linear system
    let solved: Vec<bool> = if discount < 1.0 {
        (0..n).map(|s| !mdp.is_terminal(s)).collect()
    } else {
        let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (s, row) in succ.iter().enumerate() {
            for &(next, _) in row {
                pred[next].push(s);
            }
        }
        let mut reach = exits.clone();
        let mut stack: Vec<usize> = (0..n).filter(|&s| reach[s]).collect();
        while let Some(s) = stack.pop() {
            for &p in &pred[s] {
                if !reach[p] {
                    reach[p] = true;
                    stack.push(p);
                }
            }
        }
        if let Some(s) = (0..n).find(|&s| !mdp.is_terminal(s) && !reach[s] && reward[s] != 0.0) {
            return Err(Error::Divergence {
                solver: "policy evaluation",
                reason: format!(
                    "state {s} collects reward forever without reaching a terminal state"
                ),
            });
        }
        reach
    };

    let index: Vec<usize> = (0..n).filter(|&s| solved[s]).collect();
    let mut position = vec![usize::MAX; n];
    for (k, &s) in index.iter().enumerate() {
        position[s] = k;
    }
    let mut values = vec![0.0; n];
    let m = index.len();
    if m == 0 {
        return Ok(values);
    }
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (k, &s) in index.iter().enumerate() {
        b[k] = reward[s];
        for &(next, p) in &succ[s] {
            if solved[next] {
                a[(k, position[next])] -= discount * p;
            }
        }
    }
    let x = a.lu().solve(&b).ok_or_else(|| Error::Divergence {
        solver: "policy evaluation",
        reason: "singular evaluation system".into(),
    })?;
    for (k, &s) in index.iter().enumerate() {
        values[s] = x[k];
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("policy values".into()));
    }
    Ok(values)
}

/// Howard policy iteration from the all-zeros policy. Returns a deterministic
/// policy; ties keep the incumbent action, otherwise the lowest index wins.
pub fn policy_iteration(mdp: &TabularMdp, discount: f64) -> Result<StochasticPolicy> {
    check_discount(discount)?;
    let n_actions = mdp.n_actions();
    let mut actions = vec![0usize; mdp.n_states()];
    for _ in 0..MAX_IMPROVEMENT_ROUNDS {
        let policy = StochasticPolicy::deterministic(&actions, n_actions)?;
        let values = evaluate_policy(mdp, &policy, discount)?;
        let mut changed = false;
        for (s, current) in actions.iter_mut().enumerate() {
            if mdp.is_terminal(s) {
                continue;
            }
            let q: Vec<f64> = (0..n_actions)
                .map(|a| mdp.lookahead(s, a, &values, discount))
                .collect();
            let best = argmax(&q);
            if q[best] > q[*current] + IMPROVEMENT_TOL {
                *current = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(policy);
        }
    }
    Err(Error::Divergence {
        solver: "policy iteration",
        reason: format!("still improving after {MAX_IMPROVEMENT_ROUNDS} rounds"),
    })
}

/// Maximum-likelihood MDP from logged transitions.
///
/// Unseen (state, action) pairs become deterministic self-loops. States in
/// which an absorbed trajectory ended are terminal and carry that
/// trajectory's final reward (averaged when observed more than once).
pub fn estimate_mdp(
    dataset: &TrajectoryDataset,
    n_states: usize,
    n_actions: usize,
) -> Result<TabularMdp> {
    if dataset.is_empty() || dataset.n_pairs() == 0 {
        return Err(Error::Empty("dataset"));
    }
    dataset.check_ranges(n_states, n_actions)?;
    let mut counts = vec![std::collections::BTreeMap::<usize, u64>::new(); n_states * n_actions];
    let mut reward_sum = vec![0.0; n_states];
    let mut reward_n = vec![0u64; n_states];
    let mut terminal = vec![false; n_states];
    let mut initial = vec![0.0; n_states];

    for traj in dataset.iter() {
        if traj.is_empty() {
            continue;
        }
        initial[traj.contexts[0]] += 1.0;
        for t in 0..traj.len() {
            let next = if t + 1 < traj.len() {
                Some(traj.contexts[t + 1])
            } else {
                traj.final_context
            };
            let Some(next) = next else { continue };
            *counts[traj.contexts[t] * n_actions + traj.actions[t]]
                .entry(next)
                .or_insert(0) += 1;
            reward_sum[next] += traj.step_rewards[t];
            reward_n[next] += 1;
            if t + 1 == traj.len() && traj.terminated.is_absorbed() {
                terminal[next] = true;
            }
        }
    }

    let rows = (0..n_states * n_actions)
        .map(|idx| {
            let s = idx / n_actions;
            let c = &counts[idx];
            let total: u64 = c.values().sum();
            if terminal[s] || total == 0 {
                vec![(s, 1.0)]
            } else {
                c.iter()
                    .map(|(&next, &k)| (next, k as f64 / total as f64))
                    .collect()
            }
        })
        .collect();
    let reward = reward_sum
        .iter()
        .zip(&reward_n)
        .map(|(&r, &n)| if n == 0 { 0.0 } else { r / n as f64 })
        .collect();
    let n_init: f64 = initial.iter().sum();
    let initial_dist = initial.iter().map(|c| c / n_init).collect();
    TabularMdp::from_rows(n_states, n_actions, rows, reward, terminal, initial_dist)
}

/// Expected reward collected within `horizon` steps, by forward propagation
/// of the state distribution. Mass entering a terminal state is absorbed.
pub fn exact_policy_value(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    horizon: usize,
) -> Result<f64> {
    policy.check_against(mdp)?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut dist: Vec<f64> = mdp
        .initial_dist()
        .iter()
        .enumerate()
        .map(|(s, &p)| if mdp.is_terminal(s) { 0.0 } else { p })
        .collect();
    let mut value = 0.0;
    for _ in 0..horizon {
        let mut next_dist = vec![0.0; mdp.n_states()];
        for (s, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (a, &pa) in policy.row(s).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for &(next, p) in mdp.row(s, a) {
                    let m = mass * pa * p;
                    value += m * mdp.reward[next];
                    if !mdp.is_terminal(next) {
                        next_dist[next] += m;
                    }
                }
            }
        }
        dist = next_dist;
    }
    Ok(value)
}

pub(crate) fn sample_index<R: Rng + ?Sized>(
    probs: impl IntoIterator<Item = f64>,
    rng: &mut R,
) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.into_iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Rolls out `n` episodes of `policy` in `mdp`, each capped at `max_len` steps.
pub fn sample_trajectories<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    n: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<TrajectoryDataset> {
    policy.check_against(mdp)?;
    if n == 0 || max_len == 0 {
        return Err(Error::InvalidArgument(
            "n and max_len must be positive".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut state = sample_index(mdp.initial_dist().iter().copied(), rng);
        if mdp.is_terminal(state) {
            return Err(Error::TerminalState(state));
        }
        let mut traj = Trajectory {
            contexts: Vec::new(),
            actions: Vec::new(),
            step_rewards: Vec::new(),
            terminated: Termination::CensoredAtHorizon,
            final_context: None,
        };
        for _ in 0..max_len {
            let action = sample_index(policy.row(state).iter().copied(), rng);
            let next = mdp.row(state, action);
            let next = next[sample_index(next.iter().map(|&(_, p)| p), rng)].0;
            traj.contexts.push(state);
            traj.actions.push(action);
            traj.step_rewards.push(mdp.reward[next]);
            state = next;
            if mdp.is_terminal(next) {
                traj.terminated = Termination::from_terminal_reward(mdp.reward[next]);
                break;
            }
        }
        traj.final_context = Some(state);
        out.push(traj);
    }
    Ok(TrajectoryDataset::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// s0: action 0 stays (reward 0), action 1 enters the +1 terminal s1.
    fn chain() -> TabularMdp {
        TabularMdp::from_dense(
            &[
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            ],
            vec![0.0, 1.0],
            vec![false, true],
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn chain_policy_iteration_goes() {
        let pi = policy_iteration(&chain(), 1.0).unwrap();
        assert_eq!(pi.greedy_actions()[0], 1);
        assert!(pi.is_deterministic());
    }

    #[test]
    fn chain_value_iteration_undiscounted() {
        let v = value_iteration(&chain(), 1.0, 1e-12).unwrap();
        assert!((v.values[0] - 1.0).abs() < 1e-12);
        assert_eq!(v.values[1], 0.0);
        // undiscounted, waiting ties with going; any discount breaks the tie
        let v = value_iteration(&chain(), 0.9, 1e-12).unwrap();
        assert_eq!(v.greedy[0], 1);
    }

    #[test]
    fn single_action_mdp() {
        let mdp = TabularMdp::from_dense(
            &[vec![vec![0.5, 0.5]], vec![vec![0.0, 1.0]]],
            vec![0.0, -1.0],
            vec![false, true],
            vec![1.0, 0.0],
        )
        .unwrap();
        let pi = policy_iteration(&mdp, 0.9).unwrap();
        assert_eq!(pi.rows(), &[vec![1.0], vec![1.0]]);
    }

    #[test]
    fn terminal_only_values_are_zero() {
        let mdp = TabularMdp::from_dense(
            &[vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![1.0, -1.0],
            vec![true, true],
            vec![0.5, 0.5],
        )
        .unwrap();
        let v = value_iteration(&mdp, 1.0, 1e-9).unwrap();
        assert_eq!(v.values, vec![0.0, 0.0]);
    }

    #[test]
    fn non_episodic_undiscounted_diverges() {
        // A rewarding self-loop that never terminates.
        let mdp = TabularMdp::from_dense(
            &[vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            vec![1.0, 1.0],
            vec![false, false],
            vec![1.0, 0.0],
        )
        .unwrap();
        assert!(matches!(
            policy_iteration(&mdp, 1.0),
            Err(Error::Divergence { .. })
        ));
        assert!(matches!(
            value_iteration(&mdp, 1.0, 1e-6),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn soften_examples() {
        let pi = StochasticPolicy::deterministic(&[3, 0], 8).unwrap();
        assert_eq!(pi.soften(0.0).unwrap(), pi);
        let uniform = pi.soften(1.0).unwrap();
        assert!(uniform
            .rows()
            .iter()
            .flatten()
            .all(|&p| (p - 0.125).abs() < 1e-15));
        let soft = pi.soften(0.08).unwrap();
        assert!((soft.prob(0, 3) - 0.93).abs() < 1e-12);
        assert!((soft.prob(0, 0) - 0.01).abs() < 1e-12);
        soft.validate().unwrap();
        assert!(pi.soften(1.5).is_err());
        assert!(pi.soften(-0.1).is_err());
    }

    #[test]
    fn estimate_single_transition() {
        let ds = TrajectoryDataset::new(vec![Trajectory {
            contexts: vec![0],
            actions: vec![0],
            step_rewards: vec![0.0],
            terminated: Termination::CensoredAtHorizon,
            final_context: Some(1),
        }]);
        let mdp = estimate_mdp(&ds, 3, 2).unwrap();
        assert_eq!(mdp.prob(0, 0, 1), 1.0);
        // unseen pair
        assert_eq!(mdp.row(0, 1), &[(0, 1.0)]);
        assert_eq!(mdp.row(2, 0), &[(2, 1.0)]);
        assert!(!mdp.is_terminal(1));
    }

    #[test]
    fn estimate_marks_absorbing_states() {
        let ds = TrajectoryDataset::new(vec![Trajectory {
            contexts: vec![0, 1],
            actions: vec![1, 0],
            step_rewards: vec![0.0, -1.0],
            terminated: Termination::Died,
            final_context: Some(2),
        }]);
        let mdp = estimate_mdp(&ds, 3, 2).unwrap();
        assert!(mdp.is_terminal(2));
        assert_eq!(mdp.reward()[2], -1.0);
        assert_eq!(mdp.prob(0, 1, 1), 1.0);
        assert_eq!(mdp.initial_dist(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn exact_value_immediate_win() {
        let pi = StochasticPolicy::deterministic(&[1, 0], 2).unwrap();
        assert!((exact_policy_value(&chain(), &pi, 1).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_value_symmetric_zero() {
        let mdp = TabularMdp::from_dense(
            &[
                vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
                vec![vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]],
                vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
            ],
            vec![0.0, 1.0, -1.0],
            vec![false, true, true],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        let v = exact_policy_value(&mdp, &StochasticPolicy::uniform(3, 2), 4).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let mdp = chain();
        let text = mdp.to_json().unwrap();
        assert!(text.contains("\"transition\":[[[1.0,0.0],[0.0,1.0]]"));
        assert_eq!(TabularMdp::from_json(&text).unwrap(), mdp);
    }

    #[test]
    fn invalid_mdps_rejected() {
        let bad_sum = TabularMdp::from_dense(&[vec![vec![0.5]]], vec![0.0], vec![false], vec![1.0]);
        assert!(bad_sum.is_err());
        let loose_terminal = TabularMdp::from_dense(
            &[vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            vec![0.0, 0.0],
            vec![false, true],
            vec![1.0, 0.0],
        );
        assert!(loose_terminal.is_err());
    }

    #[test]
    fn rollouts_respect_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pi = StochasticPolicy::uniform(2, 2);
        let ds = sample_trajectories(&chain(), &pi, 200, 3, &mut rng).unwrap();
        for t in ds.iter() {
            assert!(t.len() <= 3);
            t.validate().unwrap();
            if t.terminated == Termination::Discharged {
                assert_eq!(t.final_context, Some(1));
            }
        }
    }
}
