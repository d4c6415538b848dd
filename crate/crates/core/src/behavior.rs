//! Common interface of behavior-policy estimators and target policies.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::StochasticPolicy;
use crate::metrics::{PredictionBatch, SigmoidCalibration};
use crate::net::{History, Matrix};
use crate::trajectory::TrajectoryDataset;

const PREDICT_CHUNK: usize = 4096;

/// Anything that assigns a distribution over actions to a history.
pub trait ActionModel {
    fn n_actions(&self) -> usize;

    /// One probability row per history.
    fn predict(&self, histories: &[History<'_>]) -> Result<Matrix>;

    /// One row per step of `dataset`, in [`TrajectoryDataset::steps`] order.
    fn predict_dataset(&self, dataset: &TrajectoryDataset) -> Result<Matrix> {
        let histories: Vec<History<'_>> = dataset
            .steps()
            .map(|(i, t)| History::of(&dataset.trajectories[i], t))
            .collect();
        let mut out = Matrix::zeros(histories.len(), self.n_actions());
        for (c, chunk) in histories.chunks(PREDICT_CHUNK).enumerate() {
            let part = self.predict(chunk)?;
            for r in 0..chunk.len() {
                out.row_mut(c * PREDICT_CHUNK + r)
                    .copy_from_slice(part.row(r));
            }
        }
        Ok(out)
    }
}

impl ActionModel for StochasticPolicy {
    fn n_actions(&self) -> usize {
        StochasticPolicy::n_actions(self)
    }

    fn predict(&self, histories: &[History<'_>]) -> Result<Matrix> {
        let mut out = Matrix::zeros(histories.len(), self.n_actions());
        for (r, h) in histories.iter().enumerate() {
            let s = h.last_context();
            if s >= self.n_states() {
                return Err(Error::InvalidArgument(format!(
                    "context {s} outside the policy's state space"
                )));
            }
            out.row_mut(r).copy_from_slice(self.row(s));
        }
        Ok(out)
    }
}

impl<M: ActionModel + ?Sized> ActionModel for &M {
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }

    fn predict(&self, histories: &[History<'_>]) -> Result<Matrix> {
        (**self).predict(histories)
    }

    fn predict_dataset(&self, dataset: &TrajectoryDataset) -> Result<Matrix> {
        (**self).predict_dataset(dataset)
    }
}

/// Per-step action distributions regrouped by trajectory: `[i][t][a]`.
pub fn step_probs<M: ActionModel + ?Sized>(
    model: &M,
    dataset: &TrajectoryDataset,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let flat = model.predict_dataset(dataset)?;
    let mut row = 0;
    Ok(dataset
        .iter()
        .map(|tr| {
            let rows = (0..tr.len()).map(|t| flat.row(row + t).to_vec()).collect();
            row += tr.len();
            rows
        })
        .collect())
}

/// Model predictions on every step, labelled with the logged actions.
pub fn prediction_batch<M: ActionModel + ?Sized>(
    model: &M,
    dataset: &TrajectoryDataset,
) -> Result<PredictionBatch> {
    let probs = model.predict_dataset(dataset)?;
    let labels = dataset
        .steps()
        .map(|(i, t)| dataset.trajectories[i].actions[t])
        .collect();
    PredictionBatch::new(probs, labels)
}

/// A model whose outputs pass through a fitted sigmoid calibration.
#[derive(Debug, Clone)]
pub struct Calibrated<M> {
    pub model: M,
    pub calibration: SigmoidCalibration,
}

impl<M: ActionModel> Calibrated<M> {
    /// Fits the calibration map on a held-out split.
    pub fn fit(model: M, validation: &TrajectoryDataset) -> Result<Self> {
        let calibration = SigmoidCalibration::fit(&prediction_batch(&model, validation)?);
        Ok(Calibrated { model, calibration })
    }
}

impl<M: ActionModel> ActionModel for Calibrated<M> {
    fn n_actions(&self) -> usize {
        self.model.n_actions()
    }

    fn predict(&self, histories: &[History<'_>]) -> Result<Matrix> {
        self.calibration.apply(&self.model.predict(histories)?)
    }

    fn predict_dataset(&self, dataset: &TrajectoryDataset) -> Result<Matrix> {
        self.calibration
            .apply(&self.model.predict_dataset(dataset)?)
    }
}

/// Shuffled mini-batches of step indices `0..n`.
pub(crate) fn shuffled_batches<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}
