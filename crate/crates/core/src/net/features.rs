//! Turning logged histories into encoder inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::encoder::{EncoderInput, EncoderKind, SequenceBatch};
use crate::net::matrix::Matrix;
use crate::sepsis;
use crate::trajectory::{Trajectory, TrajectoryDataset};

/// How a context index maps to a raw feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContextEncoding {
    OneHot {
        n_contexts: usize,
    },
    Table {
        rows: Vec<Vec<f64>>,
    },
    /// Ordinal features of the sepsis simulator state.
    Sepsis,
}

impl ContextEncoding {
    pub fn dim(&self) -> usize {
        match self {
            ContextEncoding::OneHot { n_contexts } => *n_contexts,
            ContextEncoding::Table { rows } => rows.first().map_or(0, Vec::len),
            ContextEncoding::Sepsis => sepsis::N_FEATURES,
        }
    }

    pub fn n_contexts(&self) -> usize {
        match self {
            ContextEncoding::OneHot { n_contexts } => *n_contexts,
            ContextEncoding::Table { rows } => rows.len(),
            ContextEncoding::Sepsis => sepsis::N_STATES,
        }
    }

    pub fn features(&self, context: usize) -> Result<Vec<f64>> {
        if context >= self.n_contexts() {
            return Err(Error::InvalidArgument(format!(
                "context {context} out of range"
            )));
        }
        Ok(match self {
            ContextEncoding::OneHot { n_contexts } => {
                let mut v = vec![0.0; *n_contexts];
                v[context] = 1.0;
                v
            }
            ContextEncoding::Table { rows } => rows[context].clone(),
            ContextEncoding::Sepsis => sepsis::PatientState::from_index(context)?
                .features()
                .to_vec(),
        })
    }
}

/// A history `h_t = (x_0, a_0, …, x_t)`: one more context than actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct History<'a> {
    pub contexts: &'a [usize],
    pub actions: &'a [usize],
}

impl<'a> History<'a> {
    pub fn new(contexts: &'a [usize], actions: &'a [usize]) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::Empty("history"));
        }
        if contexts.len() != actions.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "history with {} contexts needs {} actions, got {}",
                contexts.len(),
                contexts.len() - 1,
                actions.len()
            )));
        }
        Ok(History { contexts, actions })
    }

    /// The history preceding action `t` of a trajectory.
    pub fn of(traj: &'a Trajectory, t: usize) -> Self {
        History {
            contexts: &traj.contexts[..=t],
            actions: &traj.actions[..t],
        }
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn last_context(&self) -> usize {
        self.contexts[self.contexts.len() - 1]
    }
}

/// Standardized context features plus, for sequence inputs, a one-hot
/// encoding of the previous action (zeros at the first step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFeaturizer {
    pub contexts: ContextEncoding,
    pub n_actions: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputFeaturizer {
    /// Per-feature mean and standard deviation over every context at which
    /// an action was taken in `dataset`.
    pub fn fit(
        contexts: ContextEncoding,
        n_actions: usize,
        dataset: &TrajectoryDataset,
    ) -> Result<Self> {
        let dim = contexts.dim();
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        let mut n = 0usize;
        for (i, t) in dataset.steps() {
            let x = contexts.features(dataset.trajectories[i].contexts[t])?;
            for k in 0..dim {
                sum[k] += x[k];
                sum_sq[k] += x[k] * x[k];
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("training dataset"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let var = (sq / n as f64 - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(InputFeaturizer {
            contexts,
            n_actions,
            mean,
            std,
        })
    }

    /// Identity standardization.
    pub fn unstandardized(contexts: ContextEncoding, n_actions: usize) -> Self {
        let dim = contexts.dim();
        InputFeaturizer {
            contexts,
            n_actions,
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn context_dim(&self) -> usize {
        self.contexts.dim()
    }

    pub fn input_dim(&self, kind: EncoderKind) -> usize {
        match kind {
            EncoderKind::Feedforward => self.context_dim(),
            EncoderKind::Recurrent => self.context_dim() + self.n_actions,
        }
    }

    pub fn context_row(&self, context: usize) -> Result<Vec<f64>> {
        let mut x = self.contexts.features(context)?;
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
        Ok(x)
    }

    fn step_row(&self, history: &History<'_>, t: usize) -> Result<Vec<f64>> {
        let mut x = self.context_row(history.contexts[t])?;
        let mut onehot = vec![0.0; self.n_actions];
        if t > 0 {
            let a = history.actions[t - 1];
            if a >= self.n_actions {
                return Err(Error::InvalidArgument(format!("action {a} out of range")));
            }
            onehot[a] = 1.0;
        }
        x.extend(onehot);
        Ok(x)
    }

    /// One row per history holding its last context.
    pub fn markov_input(&self, histories: &[History<'_>]) -> Result<Matrix> {
        let rows = histories
            .iter()
            .map(|h| self.context_row(h.last_context()))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.context_dim()));
        }
        Matrix::from_rows(&rows)
    }

    /// Left-padded step inputs; padded steps are masked out.
    pub fn sequence_input(&self, histories: &[History<'_>]) -> Result<SequenceBatch> {
        let dim = self.input_dim(EncoderKind::Recurrent);
        let longest = histories.iter().map(History::len).max().unwrap_or(0);
        let mut steps = vec![Matrix::zeros(histories.len(), dim); longest];
        let mut masks = vec![vec![false; histories.len()]; longest];
        for (r, h) in histories.iter().enumerate() {
            let offset = longest - h.len();
            for t in 0..h.len() {
                steps[offset + t]
                    .row_mut(r)
                    .copy_from_slice(&self.step_row(h, t)?);
                masks[offset + t][r] = true;
            }
        }
        Ok(SequenceBatch { steps, masks })
    }

    /// Whole trajectories aligned at their first step; steps past a
    /// trajectory's end are masked out, so the state after step `t` is the
    /// encoding of the prefix `h_t`.
    pub fn aligned_sequences(&self, trajectories: &[Trajectory]) -> Result<SequenceBatch> {
        let dim = self.input_dim(EncoderKind::Recurrent);
        let longest = trajectories.iter().map(Trajectory::len).max().unwrap_or(0);
        let mut steps = vec![Matrix::zeros(trajectories.len(), dim); longest];
        let mut masks = vec![vec![false; trajectories.len()]; longest];
        for (r, tr) in trajectories
            .iter()
            .enumerate()
            .filter(|(_, tr)| !tr.is_empty())
        {
            let h = History::of(tr, tr.len() - 1);
            for t in 0..tr.len() {
                steps[t].row_mut(r).copy_from_slice(&self.step_row(&h, t)?);
                masks[t][r] = true;
            }
        }
        Ok(SequenceBatch { steps, masks })
    }

    pub fn encoder_input(
        &self,
        kind: EncoderKind,
        histories: &[History<'_>],
    ) -> Result<EncoderInput> {
        match kind {
            EncoderKind::Feedforward => Ok(EncoderInput::Rows(self.markov_input(histories)?)),
            EncoderKind::Recurrent => Ok(EncoderInput::Sequences(self.sequence_input(histories)?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Termination;

    fn traj() -> Trajectory {
        Trajectory {
            contexts: vec![0, 2, 1],
            actions: vec![1, 0, 1],
            step_rewards: vec![0.0, 0.0, 1.0],
            terminated: Termination::Discharged,
            final_context: Some(2),
        }
    }

    #[test]
    fn standardization_statistics() {
        let ds = TrajectoryDataset::new(vec![traj()]);
        let f = InputFeaturizer::fit(ContextEncoding::OneHot { n_contexts: 3 }, 2, &ds).unwrap();
        for k in 0..3 {
            assert!((f.mean[k] - 1.0 / 3.0).abs() < 1e-15);
        }
        let rows: Vec<Vec<f64>> = (0..3).map(|c| f.context_row(c).unwrap()).collect();
        for k in 0..3 {
            let m: f64 = rows.iter().map(|r| r[k]).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn sequences_are_left_padded() {
        let t = traj();
        let f = InputFeaturizer::unstandardized(ContextEncoding::OneHot { n_contexts: 3 }, 2);
        let batch = f
            .sequence_input(&[History::of(&t, 0), History::of(&t, 2)])
            .unwrap();
        assert_eq!(batch.steps.len(), 3);
        assert_eq!(batch.masks[0], vec![false, true]);
        assert_eq!(batch.masks[2], vec![true, true]);
        // first real step of the short history: context 0, no previous action
        assert_eq!(batch.steps[2].row(0), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        // third step of the long history: context 1 after action 0
        assert_eq!(batch.steps[2].row(1), &[0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn history_shape_checked() {
        assert!(History::new(&[0, 1], &[0]).is_ok());
        assert!(History::new(&[0, 1], &[]).is_err());
        assert!(History::new(&[], &[]).is_err());
    }
}
