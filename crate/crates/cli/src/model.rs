//! The behavior-policy estimate written by `fit-behavior`.

use proto_ope::behavior::ActionModel;
use proto_ope::classifier::NetClassifier;
use proto_ope::metrics::SigmoidCalibration;
use proto_ope::net::{History, Matrix};
use proto_ope::PrototypeModel;
use serde::{Deserialize, Serialize};

use crate::config::SweepEstimator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Network {
    Feedforward(NetClassifier),
    Prototype(PrototypeModel),
}

impl ActionModel for Network {
    fn n_actions(&self) -> usize {
        match self {
            Network::Feedforward(m) => m.n_actions(),
            Network::Prototype(m) => m.n_actions(),
        }
    }

    fn predict(&self, histories: &[History<'_>]) -> proto_ope::Result<Matrix> {
        match self {
            Network::Feedforward(m) => m.predict(histories),
            Network::Prototype(m) => m.predict(histories),
        }
    }

    fn predict_dataset(&self, dataset: &proto_ope::TrajectoryDataset) -> proto_ope::Result<Matrix> {
        match self {
            Network::Feedforward(m) => m.predict_dataset(dataset),
            Network::Prototype(m) => m.predict_dataset(dataset),
        }
    }
}

/// A trained network and the sigmoid calibration fitted on a held-out split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub network: Network,
    pub calibration: SigmoidCalibration,
}

impl FittedModel {
    pub fn prototype(&self) -> Option<&PrototypeModel> {
        match &self.network {
            Network::Prototype(m) => Some(m),
            Network::Feedforward(_) => None,
        }
    }

    pub fn estimator(&self) -> SweepEstimator {
        match &self.network {
            Network::Feedforward(_) => SweepEstimator::Feedforward,
            Network::Prototype(m) => SweepEstimator::Prototype { n: m.n, q: m.q },
        }
    }
}

impl ActionModel for FittedModel {
    fn n_actions(&self) -> usize {
        self.network.n_actions()
    }

    fn predict(&self, histories: &[History<'_>]) -> proto_ope::Result<Matrix> {
        self.calibration.apply(&self.network.predict(histories)?)
    }

    fn predict_dataset(&self, dataset: &proto_ope::TrajectoryDataset) -> proto_ope::Result<Matrix> {
        self.calibration
            .apply(&self.network.predict_dataset(dataset)?)
    }
}
