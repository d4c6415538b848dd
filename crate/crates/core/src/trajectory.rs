//! Logged trajectories and their JSON-lines representation.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Absorbed in a positive-reward terminal state.
    Discharged,
    /// Absorbed in a negative-reward terminal state.
    Died,
    /// Absorbed in a zero-reward terminal state (generic MDPs only).
    Terminated,
    /// Still running when the step budget ran out.
    CensoredAtHorizon,
}

impl Termination {
    pub fn from_terminal_reward(reward: f64) -> Self {
        if reward > 0.0 {
            Termination::Discharged
        } else if reward < 0.0 {
            Termination::Died
        } else {
            Termination::Terminated
        }
    }

    pub fn is_absorbed(self) -> bool {
        self != Termination::CensoredAtHorizon
    }
}

/// An observed sequence of (context, action) pairs with its outcome.
///
/// `contexts[t]` is the state in which `actions[t]` was taken. The state
/// entered after the last action, when known, is kept in `final_context`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub contexts: Vec<usize>,
    pub actions: Vec<usize>,
    pub step_rewards: Vec<f64>,
    pub terminated: Termination,
    pub final_context: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Outcome credited to the whole trajectory.
    pub fn reward(&self) -> f64 {
        self.step_rewards.iter().sum()
    }

    /// Index of the last observed step, if any.
    pub fn last_step(&self) -> Option<usize> {
        self.len().checked_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.contexts.len() != self.actions.len()
            || self.actions.len() != self.step_rewards.len()
        {
            return Err(Error::InvalidArgument(format!(
                "trajectory field lengths differ: {} contexts, {} actions, {} rewards",
                self.contexts.len(),
                self.actions.len(),
                self.step_rewards.len()
            )));
        }
        let r = self.reward();
        let consistent = match self.terminated {
            Termination::Discharged => r > 0.0,
            Termination::Died => r < 0.0,
            Termination::Terminated | Termination::CensoredAtHorizon => true,
        };
        if !consistent {
            return Err(Error::InvalidArgument(format!(
                "reward {r} inconsistent with termination {:?}",
                self.terminated
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryLine {
    contexts: Vec<usize>,
    actions: Vec<usize>,
    reward: f64,
    terminated: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    final_context: Option<usize>,
}

impl From<&Trajectory> for TrajectoryLine {
    fn from(t: &Trajectory) -> Self {
        TrajectoryLine {
            contexts: t.contexts.clone(),
            actions: t.actions.clone(),
            reward: t.reward(),
            terminated: t.terminated,
            final_context: t.final_context,
        }
    }
}

impl TryFrom<TrajectoryLine> for Trajectory {
    type Error = Error;

    fn try_from(line: TrajectoryLine) -> Result<Self> {
        let mut step_rewards = vec![0.0; line.actions.len()];
        if let Some(last) = step_rewards.last_mut() {
            *last = line.reward;
        } else if line.reward != 0.0 {
            return Err(Error::InvalidArgument(
                "empty trajectory with nonzero reward".into(),
            ));
        }
        let traj = Trajectory {
            contexts: line.contexts,
            actions: line.actions,
            step_rewards,
            terminated: line.terminated,
            final_context: line.final_context,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// An ordered collection of trajectories; the index is the trajectory id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryDataset {
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        TrajectoryDataset { trajectories }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Total number of (context, action) pairs.
    pub fn n_pairs(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }

    /// Subset by trajectory index, preserving the given order.
    pub fn select(&self, indices: &[usize]) -> TrajectoryDataset {
        TrajectoryDataset::new(
            indices
                .iter()
                .map(|&i| self.trajectories[i].clone())
                .collect(),
        )
    }

    /// Every (context, action) pair in (trajectory, time) order.
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.trajectories
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len()).map(move |s| (i, s)))
    }

    pub fn check_ranges(&self, n_contexts: usize, n_actions: usize) -> Result<()> {
        for (i, t) in self.trajectories.iter().enumerate() {
            t.validate()?;
            let bad_ctx = t
                .contexts
                .iter()
                .chain(t.final_context.iter())
                .any(|&c| c >= n_contexts);
            let bad_act = t.actions.iter().any(|&a| a >= n_actions);
            if bad_ctx || bad_act {
                return Err(Error::InvalidArgument(format!(
                    "trajectory {i} has an index out of range ({n_contexts} contexts, {n_actions} actions)"
                )));
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.trajectories {
            serde_json::to_writer(&mut w, &TrajectoryLine::from(t))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut trajectories = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TrajectoryLine = serde_json::from_str(&line)?;
            trajectories.push(Trajectory::try_from(parsed)?);
        }
        Ok(TrajectoryDataset { trajectories })
    }
}

impl FromIterator<Trajectory> for TrajectoryDataset {
    fn from_iter<I: IntoIterator<Item = Trajectory>>(iter: I) -> Self {
        TrajectoryDataset::new(iter.into_iter().collect())
    }
}
