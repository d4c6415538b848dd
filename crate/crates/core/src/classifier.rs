//! Black-box baseline: an encoder followed by a linear softmax head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{shuffled_batches, ActionModel};
use crate::error::{Error, Result};
use crate::net::{
    loss_and_grad, softmax_rows, xavier, AdamConfig, AdamState, BoundParams, Encoder, EncoderKind,
    Graph, History, InputFeaturizer, Matrix, NodeId, ParamSet, DEFAULT_HIDDEN,
};
use crate::trajectory::TrajectoryDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub encoder: EncoderKind,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            encoder: EncoderKind::Feedforward,
            hidden: DEFAULT_HIDDEN.to_vec(),
            epochs: 400,
            batch_size: 1024,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetClassifier {
    pub featurizer: InputFeaturizer,
    pub encoder: Encoder,
    pub n_actions: usize,
    pub params: ParamSet,
}

impl NetClassifier {
    pub fn init(
        featurizer: InputFeaturizer,
        config: &ClassifierConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let n_actions = featurizer.n_actions;
        let encoder = Encoder::new(
            config.encoder,
            featurizer.input_dim(config.encoder),
            config.hidden.clone(),
        )?;
        let mut params = ParamSet::new();
        encoder.init_params("enc", rng, &mut params);
        params.insert("head.w", xavier(rng, encoder.latent_dim(), n_actions));
        params.insert("head.b", Matrix::zeros(1, n_actions));
        Ok(NetClassifier {
            featurizer,
            encoder,
            n_actions,
            params,
        })
    }

    fn logits(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        histories: &[History<'_>],
    ) -> Result<NodeId> {
        let input = self
            .featurizer
            .encoder_input(self.encoder.kind(), histories)?;
        let z = self.encoder.forward(graph, bound, "enc", &input)?;
        let w = bound.get("head.w")?;
        let b = bound.get("head.b")?;
        let logits = graph.matmul(z, w)?;
        graph.add_row(logits, b)
    }

    /// Mean NLL of the logged actions at the given steps, with its gradient.
    pub fn loss_and_grad(
        &self,
        dataset: &TrajectoryDataset,
        steps: &[(usize, usize)],
    ) -> Result<(f64, ParamSet)> {
        let histories: Vec<History<'_>> = steps
            .iter()
            .map(|&(i, t)| History::of(&dataset.trajectories[i], t))
            .collect();
        let labels: Vec<usize> = steps
            .iter()
            .map(|&(i, t)| dataset.trajectories[i].actions[t])
            .collect();
        loss_and_grad(&self.params, |g, b| {
            let logits = self.logits(g, b, &histories)?;
            g.softmax_nll(logits, &labels)
        })
    }

    /// Adam on shuffled mini-batches of steps.
    pub fn train(
        featurizer: InputFeaturizer,
        dataset: &TrajectoryDataset,
        config: &ClassifierConfig,
    ) -> Result<Self> {
        if dataset.n_pairs() == 0 {
            return Err(Error::Empty("training dataset"));
        }
        dataset.check_ranges(featurizer.contexts.n_contexts(), featurizer.n_actions)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = NetClassifier::init(featurizer, config, &mut rng)?;
        let mut adam = AdamState::new(config.adam, &model.params);
        let steps: Vec<(usize, usize)> = dataset.steps().collect();
        for _ in 0..config.epochs {
            for batch in shuffled_batches(steps.len(), config.batch_size, &mut rng) {
                let picked: Vec<(usize, usize)> = batch.iter().map(|&k| steps[k]).collect();
                let (_, grads) = model.loss_and_grad(dataset, &picked)?;
                adam.update(&mut model.params, &grads)?;
            }
        }
        Ok(model)
    }

    fn head(&self, z: &Matrix) -> Result<Matrix> {
        let logits = z
            .matmul(self.params.get("head.w")?)?
            .add_row(self.params.get("head.b")?)?;
        Ok(softmax_rows(&logits))
    }
}

impl ActionModel for NetClassifier {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn predict(&self, histories: &[History<'_>]) -> Result<Matrix> {
        let input = self
            .featurizer
            .encoder_input(self.encoder.kind(), histories)?;
        self.head(&self.encoder.encode(&self.params, "enc", &input)?)
    }

    fn predict_dataset(&self, dataset: &TrajectoryDataset) -> Result<Matrix> {
        self.head(
            &self
                .encoder
                .encode_prefixes(&self.params, "enc", &self.featurizer, dataset)?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::prediction_batch;
    use crate::metrics::accuracy;
    use crate::net::ContextEncoding;
    use crate::trajectory::{Termination, Trajectory};

    /// Context 0 always takes action 1, context 1 always action 0.
    fn separable() -> TrajectoryDataset {
        (0..40)
            .map(|i| {
                let contexts: Vec<usize> = (0..3).map(|t| (i + t) % 2).collect();
                let actions = contexts.iter().map(|&c| 1 - c).collect();
                Trajectory {
                    contexts,
                    actions,
                    step_rewards: vec![0.0; 3],
                    terminated: Termination::CensoredAtHorizon,
                    final_context: None,
                }
            })
            .collect()
    }

    #[test]
    fn learns_a_separable_policy() {
        let ds = separable();
        let feat = InputFeaturizer::fit(ContextEncoding::OneHot { n_contexts: 2 }, 2, &ds).unwrap();
        let config = ClassifierConfig {
            hidden: vec![8, 8],
            epochs: 60,
            batch_size: 16,
            ..Default::default()
        };
        let config = ClassifierConfig {
            adam: AdamConfig {
                learning_rate: 0.01,
                ..config.adam
            },
            ..config
        };
        let model = NetClassifier::train(feat, &ds, &config).unwrap();
        let batch = prediction_batch(&model, &ds).unwrap();
        assert_eq!(accuracy(&batch), 1.0);
        let again = NetClassifier::train(model.featurizer.clone(), &ds, &config).unwrap();
        assert_eq!(again, model);
    }

    #[test]
    fn batched_and_single_predictions_agree() {
        let ds = separable();
        let feat = InputFeaturizer::fit(ContextEncoding::OneHot { n_contexts: 2 }, 2, &ds).unwrap();
        for kind in [EncoderKind::Feedforward, EncoderKind::Recurrent] {
            let config = ClassifierConfig {
                encoder: kind,
                hidden: vec![4, 3],
                ..Default::default()
            };
            let model =
                NetClassifier::init(feat.clone(), &config, &mut ChaCha8Rng::seed_from_u64(2))
                    .unwrap();
            let all = model.predict_dataset(&ds).unwrap();
            let single = model
                .predict(&[History::of(&ds.trajectories[3], 2)])
                .unwrap();
            assert_eq!(all.row(3 * 3 + 2), single.row(0));
        }
    }
}
