//! Prototype-based behavior-policy model.
//!
//! A history is encoded to `z`, compared to `n` latent prototypes with the
//! unit-bandwidth RBF kernel `s_j = exp(−‖z̃_j − z‖²)`, and the (truncated)
//! similarity vector feeds a softmax head `softmax(B·s + c)`. Prototypes are
//! periodically snapped onto encodings of real training prefixes.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{shuffled_batches, ActionModel};
use crate::error::{Error, Result};
use crate::mdp::argmax;
use crate::net::{
    loss_and_grad, softmax_rows, xavier, AdamConfig, AdamState, BoundParams, Encoder, EncoderKind,
    Graph, History, InputFeaturizer, Matrix, NodeId, ParamSet, DEFAULT_HIDDEN,
};
use crate::trajectory::TrajectoryDataset;

pub const DEFAULT_D_MIN_GRID: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
pub const DEFAULT_LAMBDA_D_GRID: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// Multipliers of the diversity, clustering and evidence regularizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub diversity: f64,
    pub clustering: f64,
    pub evidence: f64,
}

impl Lambdas {
    pub const ZERO: Lambdas = Lambdas {
        diversity: 0.0,
        clustering: 0.0,
        evidence: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n: usize,
    pub q: usize,
    pub lambdas: Lambdas,
    pub d_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub projection_period: usize,
    pub seed: u64,
    pub encoder: EncoderKind,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n: 10,
            q: 2,
            lambdas: Lambdas {
                diversity: 1e-3,
                clustering: 1e-3,
                evidence: 1e-3,
            },
            d_min: 1.0,
            epochs: 400,
            batch_size: 1024,
            projection_period: 5,
            seed: 0,
            encoder: EncoderKind::Feedforward,
            hidden: DEFAULT_HIDDEN.to_vec(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.lambdas;
        if self.n == 0 || self.q == 0 || self.q > self.n {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= q <= n, got n = {}, q = {}",
                self.n, self.q
            )));
        }
        if [l.diversity, l.clustering, l.evidence]
            .iter()
            .any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "regularizer multipliers must be non-negative".into(),
            ));
        }
        if !(self.d_min > 0.0 && self.d_min.is_finite()) {
            return Err(Error::InvalidArgument("d_min must be positive".into()));
        }
        if self.projection_period == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "projection_period and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A training prefix `h_t` selected as a prototype.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrototypeRef {
    pub trajectory: usize,
    pub time: usize,
    pub contexts: Vec<usize>,
    pub actions: Vec<usize>,
}

impl PrototypeRef {
    fn from_step(dataset: &TrajectoryDataset, i: usize, t: usize) -> Self {
        let tr = &dataset.trajectories[i];
        PrototypeRef {
            trajectory: i,
            time: t,
            contexts: tr.contexts[..=t].to_vec(),
            actions: tr.actions[..t].to_vec(),
        }
    }

    pub fn history(&self) -> History<'_> {
        History {
            contexts: &self.contexts,
            actions: &self.actions,
        }
    }
}

/// Values of the individual objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub nll: f64,
    pub diversity: f64,
    pub clustering: f64,
    pub evidence: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeModel {
    pub featurizer: InputFeaturizer,
    pub encoder: Encoder,
    /// Encoder weights, keyed `enc.*`.
    pub params: ParamSet,
    pub latent_prototypes: Matrix,
    pub prototype_refs: Vec<PrototypeRef>,
    /// `k × n` coefficients; column `j` belongs to prototype `j`.
    #[serde(rename = "B")]
    pub b: Matrix,
    pub c: Vec<f64>,
    pub n: usize,
    pub q: usize,
    pub lambdas: Lambdas,
    pub d_min: f64,
}

/// Entries below the `q`-th largest value are zeroed; ties at the threshold survive.
pub fn truncate(similarities: &[f64], q: usize) -> Result<Vec<f64>> {
    if q == 0 || q > similarities.len() {
        return Err(Error::InvalidArgument(format!(
            "q = {q} outside 1..={}",
            similarities.len()
        )));
    }
    let mut sorted = similarities.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[q - 1];
    Ok(similarities
        .iter()
        .map(|&s| if s >= threshold { s } else { 0.0 })
        .collect())
}

/// `exp(−‖z̃_j − z‖²)` for every row of `z` against every prototype.
pub fn rbf_similarities(z: &Matrix, prototypes: &Matrix) -> Result<Matrix> {
    Ok(z.sq_dists(prototypes)?.map(|d| (-d).exp()))
}

impl PrototypeModel {
    /// Fresh model with random encoder and head; prototypes are the
    /// encodings of `n` random training prefixes, distinct where possible.
    pub fn init(
        featurizer: InputFeaturizer,
        dataset: &TrajectoryDataset,
        config: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let k = featurizer.n_actions;
        let encoder = Encoder::new(
            config.encoder,
            featurizer.input_dim(config.encoder),
            config.hidden.clone(),
        )?;
        let mut params = ParamSet::new();
        encoder.init_params("enc", rng, &mut params);
        let b = xavier(rng, k, config.n);
        let encodings = encoder.encode_prefixes(&params, "enc", &featurizer, dataset)?;
        let steps: Vec<(usize, usize)> = dataset.steps().collect();
        if steps.is_empty() {
            return Err(Error::Empty("training dataset"));
        }
        let order = sample(rng, steps.len(), steps.len()).into_vec();
        let mut chosen: Vec<usize> = Vec::with_capacity(config.n);
        for &r in &order {
            if chosen.len() == config.n {
                break;
            }
            if !chosen.iter().any(|&c| encodings.row(c) == encodings.row(r)) {
                chosen.push(r);
            }
        }
        // fewer distinct encodings than prototypes: reuse in draw order
        let mut fill = order.iter().copied().cycle();
        while chosen.len() < config.n {
            chosen.push(fill.next().expect("nonempty"));
        }
        let latent_prototypes = encodings.select_rows(&chosen);
        let prototype_refs = chosen
            .iter()
            .map(|&r| PrototypeRef::from_step(dataset, steps[r].0, steps[r].1))
            .collect();
        Ok(PrototypeModel {
            featurizer,
            encoder,
            params,
            latent_prototypes,
            prototype_refs,
            b,
            c: vec![0.0; k],
            n: config.n,
            q: config.q,
            lambdas: config.lambdas,
            d_min: config.d_min,
        })
    }

    pub fn n_prototypes(&self) -> usize {
        self.n
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn encode(&self, histories: &[History<'_>]) -> Result<Matrix> {
        let input = self
            .featurizer
            .encoder_input(self.encoder.kind(), histories)?;
        self.encoder.encode(&self.params, "enc", &input)
    }

    pub fn encode_dataset(&self, dataset: &TrajectoryDataset) -> Result<Matrix> {
        self.encoder
            .encode_prefixes(&self.params, "enc", &self.featurizer, dataset)
    }

    /// Untruncated similarity of one latent vector to every prototype.
    pub fn similarity_vector(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim(),
                actual: z.len(),
            });
        }
        Ok(
            rbf_similarities(&Matrix::row_vector(z), &self.latent_prototypes)?
                .row(0)
                .to_vec(),
        )
    }

    /// Action probabilities from (untruncated) similarity rows.
    pub fn head(&self, similarities: &Matrix) -> Result<Matrix> {
        let mut s = similarities.clone();
        for r in 0..s.rows() {
            let kept = truncate(s.row(r), self.q)?;
            s.row_mut(r).copy_from_slice(&kept);
        }
        let logits = s
            .matmul_bt(&self.b)?
            .add_row(&Matrix::row_vector(&self.c))?;
        Ok(softmax_rows(&logits))
    }

    pub fn propensities(&self, history: History<'_>) -> Result<Vec<f64>> {
        Ok(self.predict(&[history])?.row(0).to_vec())
    }

    /// `p(J = j | h)`: untruncated similarities normalized to sum to one.
    pub fn assignment_probs(&self, z: &Matrix) -> Result<Matrix> {
        let mut s = rbf_similarities(z, &self.latent_prototypes)?;
        for r in 0..s.rows() {
            let row = s.row_mut(r);
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            } else {
                // every prototype numerically out of reach: fall back to the nearest
                let nearest = argmax(&row.iter().map(|&v| -v).collect::<Vec<_>>());
                row.iter_mut().for_each(|v| *v = 0.0);
                row[nearest] = 1.0;
            }
        }
        Ok(s)
    }

    /// Index of the most similar prototype for each row of `z`, lowest index on ties.
    pub fn nearest_prototypes(&self, z: &Matrix) -> Result<Vec<(usize, f64)>> {
        let d = z.sq_dists(&self.latent_prototypes)?;
        Ok((0..d.rows())
            .map(|r| {
                let row = d.row(r);
                let j = argmax(&row.iter().map(|&v| -v).collect::<Vec<_>>());
                (j, (-row[j]).exp())
            })
            .collect())
    }

    /// Encoder, prototypes, `B` and `c` as one parameter set.
    fn trainable(&self) -> ParamSet {
        let mut theta = self.params.clone();
        theta.insert("prototypes", self.latent_prototypes.clone());
        theta.insert("B", self.b.clone());
        theta.insert("c", Matrix::row_vector(&self.c));
        theta
    }

    fn absorb(&mut self, theta: &ParamSet) -> Result<()> {
        for (name, value) in self.params.iter_mut() {
            *value = theta.get(name)?.clone();
        }
        self.latent_prototypes = theta.get("prototypes")?.clone();
        self.b = theta.get("B")?.clone();
        self.c = theta.get("c")?.data().to_vec();
        Ok(())
    }

    /// Records the regularized objective on `graph`; returns the terms' nodes
    /// in the order nll, diversity, clustering, evidence, total.
    fn objective_nodes(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        histories: &[History<'_>],
        labels: &[usize],
    ) -> Result<[NodeId; 5]> {
        let input = self
            .featurizer
            .encoder_input(self.encoder.kind(), histories)?;
        let z = self.encoder.forward(graph, bound, "enc", &input)?;
        let protos = bound.get("prototypes")?;
        let d = graph.sq_dists(z, protos)?;
        let neg = graph.scale(d, -1.0)?;
        let s = graph.exp(neg)?;
        let logits = graph.matmul_bt(s, bound.get("B")?)?;
        let logits = graph.add_row(logits, bound.get("c")?)?;
        let nll = graph.softmax_nll(logits, labels)?;
        let r_d = graph.diversity(protos, self.d_min)?;
        let r_c = graph.row_min_sum(d)?;
        let r_e = graph.col_min_sum(d)?;
        let mut total = nll;
        for (term, lambda) in [
            (r_d, self.lambdas.diversity),
            (r_c, self.lambdas.clustering),
            (r_e, self.lambdas.evidence),
        ] {
            if lambda != 0.0 {
                let weighted = graph.scale(term, lambda)?;
                total = graph.add(total, weighted)?;
            }
        }
        Ok([nll, r_d, r_c, r_e, total])
    }

    fn batch<'d>(
        dataset: &'d TrajectoryDataset,
        steps: &[(usize, usize)],
    ) -> (Vec<History<'d>>, Vec<usize>) {
        let histories = steps
            .iter()
            .map(|&(i, t)| History::of(&dataset.trajectories[i], t))
            .collect();
        let labels = steps
            .iter()
            .map(|&(i, t)| dataset.trajectories[i].actions[t])
            .collect();
        (histories, labels)
    }

    /// Objective over the given steps of `dataset`.
    pub fn objective(
        &self,
        dataset: &TrajectoryDataset,
        steps: &[(usize, usize)],
    ) -> Result<ObjectiveTerms> {
        let (histories, labels) = Self::batch(dataset, steps);
        let mut graph = Graph::new();
        let bound = self.trainable().bind(&mut graph, false)?;
        let [nll, r_d, r_c, r_e, total] =
            self.objective_nodes(&mut graph, &bound, &histories, &labels)?;
        Ok(ObjectiveTerms {
            nll: graph.scalar(nll),
            diversity: graph.scalar(r_d),
            clustering: graph.scalar(r_c),
            evidence: graph.scalar(r_e),
            total: graph.scalar(total),
        })
    }

    /// Objective and its gradient with respect to every trainable parameter
    /// (`enc.*`, `prototypes`, `B`, `c`).
    pub fn objective_and_grad(
        &self,
        dataset: &TrajectoryDataset,
        steps: &[(usize, usize)],
    ) -> Result<(f64, ParamSet)> {
        let (histories, labels) = Self::batch(dataset, steps);
        loss_and_grad(&self.trainable(), |g, b| {
            Ok(self.objective_nodes(g, b, &histories, &labels)?[4])
        })
    }

    /// Replaces the trainable parameters with `theta` (as returned in gradients' layout).
    pub fn set_trainable(&mut self, theta: &ParamSet) -> Result<()> {
        self.absorb(theta)
    }

    pub fn trainable_params(&self) -> ParamSet {
        self.trainable()
    }

    /// Snaps every prototype onto the nearest encoding among all training
    /// prefixes; ties go to the lowest (trajectory, time).
    pub fn project(&mut self, dataset: &TrajectoryDataset) -> Result<()> {
        let steps: Vec<(usize, usize)> = dataset.steps().collect();
        if steps.is_empty() {
            return Err(Error::Empty("projection dataset"));
        }
        let encodings = self.encode_dataset(dataset)?;
        let d = self.latent_prototypes.sq_dists(&encodings)?;
        for j in 0..self.n {
            let row = d.row(j);
            let mut best = 0;
            for (r, &v) in row.iter().enumerate().skip(1) {
                if v < row[best] {
                    best = r;
                }
            }
            self.latent_prototypes
                .row_mut(j)
                .copy_from_slice(encodings.row(best));
            self.prototype_refs[j] = PrototypeRef::from_step(dataset, steps[best].0, steps[best].1);
        }
        Ok(())
    }

    /// Prototypes whose latent vector differs from a fresh encoding of their
    /// stored prefix (empty for a projected model).
    pub fn unreal_prototypes(&self) -> Result<Vec<usize>> {
        let histories: Vec<History<'_>> = self
            .prototype_refs
            .iter()
            .map(PrototypeRef::history)
            .collect();
        let z = self.encode(&histories)?;
        Ok((0..self.n)
            .filter(|&j| z.row(j) != self.latent_prototypes.row(j))
            .collect())
    }

    /// Per-prototype prefix, coefficient column and predicted action distribution.
    pub fn prototype_report(&self) -> Result<Vec<PrototypeSummary>> {
        let histories: Vec<History<'_>> = self
            .prototype_refs
            .iter()
            .map(PrototypeRef::history)
            .collect();
        let probs = self.predict(&histories)?;
        Ok(self
            .prototype_refs
            .iter()
            .enumerate()
            .map(|(j, r)| PrototypeSummary {
                prototype: j,
                source: r.clone(),
                coefficients: (0..self.b.rows()).map(|a| self.b.get(a, j)).collect(),
                probs: probs.row(j).to_vec(),
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: PrototypeModel = serde_json::from_str(text)?;
        if model.latent_prototypes.rows() != model.n
            || model.prototype_refs.len() != model.n
            || model.b.cols() != model.n
        {
            return Err(Error::InvalidArgument(
                "prototype count does not match stored arrays".into(),
            ));
        }
        if model.q == 0 || model.q > model.n {
            return Err(Error::InvalidArgument(format!(
                "q = {} outside 1..={}",
                model.q, model.n
            )));
        }
        Ok(model)
    }
}

impl ActionModel for PrototypeModel {
    fn n_actions(&self) -> usize {
        self.b.rows()
    }

    fn predict(&self, histories: &[History<'_>]) -> Result<Matrix> {
        self.head(&rbf_similarities(
            &self.encode(histories)?,
            &self.latent_prototypes,
        )?)
    }

    fn predict_dataset(&self, dataset: &TrajectoryDataset) -> Result<Matrix> {
        self.head(&rbf_similarities(
            &self.encode_dataset(dataset)?,
            &self.latent_prototypes,
        )?)
    }
}

/// Mean objective per epoch, starting with the initial model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub epoch_objective: Vec<f64>,
    pub epoch_nll: Vec<f64>,
}

/// Trains with Adam on shuffled mini-batches, projecting every
/// `projection_period` epochs and once more at the end.
pub fn train(
    featurizer: InputFeaturizer,
    dataset: &TrajectoryDataset,
    config: &TrainConfig,
) -> Result<PrototypeModel> {
    train_traced(featurizer, dataset, config, false).map(|(m, _)| m)
}

/// [`train`] that optionally records the full-data objective after each epoch.
pub fn train_traced(
    featurizer: InputFeaturizer,
    dataset: &TrajectoryDataset,
    config: &TrainConfig,
    trace: bool,
) -> Result<(PrototypeModel, TrainTrace)> {
    config.validate()?;
    dataset.check_ranges(featurizer.contexts.n_contexts(), featurizer.n_actions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = PrototypeModel::init(featurizer, dataset, config, &mut rng)?;
    let steps: Vec<(usize, usize)> = dataset.steps().collect();
    let mut record = TrainTrace::default();
    let observe = |model: &PrototypeModel, record: &mut TrainTrace| -> Result<()> {
        if trace {
            let terms = model.objective(dataset, &steps)?;
            record.epoch_objective.push(terms.total);
            record.epoch_nll.push(terms.nll);
        }
        Ok(())
    };
    observe(&model, &mut record)?;
    let mut theta = model.trainable();
    let mut adam = AdamState::new(config.adam, &theta);
    let mut projected = true;
    for epoch in 1..=config.epochs {
        for (b, batch) in shuffled_batches(steps.len(), config.batch_size, &mut rng)
            .into_iter()
            .enumerate()
        {
            let picked: Vec<(usize, usize)> = batch.iter().map(|&k| steps[k]).collect();
            let (histories, labels) = PrototypeModel::batch(dataset, &picked);
            let (_, grads) = loss_and_grad(&theta, |g, bound| {
                Ok(model.objective_nodes(g, bound, &histories, &labels)?[4])
            })
            .map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} at epoch {epoch}, batch {b}"))
                }
                other => other,
            })?;
            adam.update(&mut theta, &grads)?;
            if !theta.is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after epoch {epoch}, batch {b}"
                )));
            }
        }
        model.absorb(&theta)?;
        projected = false;
        if epoch % config.projection_period == 0 {
            model.project(dataset)?;
            theta.insert("prototypes", model.latent_prototypes.clone());
            projected = true;
        }
        observe(&model, &mut record)?;
    }
    if !projected || config.epochs == 0 {
        model.project(dataset)?;
    }
    Ok((model, record))
}

/// Validation score of one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub d_min: f64,
    pub lambda_d: f64,
    /// Mean held-out NLL of the truncated predictor over the folds.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub points: Vec<CvPoint>,
    pub best: CvPoint,
}

/// Trajectory indices per fold, shuffled with `seed` and dealt round-robin.
pub fn fold_assignment(n_trajectories: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = sample(&mut rng, n_trajectories, n_trajectories);
    let mut out = vec![Vec::new(); folds];
    for (k, i) in order.iter().enumerate() {
        out[k % folds].push(i);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    out
}

/// `folds`-fold cross-validation of `(d_min, λ_d)` over the given grid.
/// Ties keep the earliest grid point.
pub fn cross_validate(
    featurizer: &InputFeaturizer,
    dataset: &TrajectoryDataset,
    base: &TrainConfig,
    d_min_grid: &[f64],
    lambda_d_grid: &[f64],
    folds: usize,
) -> Result<CvResult> {
    let mut all = cross_validate_qs(
        featurizer,
        dataset,
        base,
        d_min_grid,
        lambda_d_grid,
        folds,
        &[base.q],
    )?;
    Ok(all.remove(0))
}

/// Cross-validation for several prediction-prototype counts at once. Training
/// does not depend on `q`, so every fold model is scored under each `q`.
pub fn cross_validate_qs(
    featurizer: &InputFeaturizer,
    dataset: &TrajectoryDataset,
    base: &TrainConfig,
    d_min_grid: &[f64],
    lambda_d_grid: &[f64],
    folds: usize,
    qs: &[usize],
) -> Result<Vec<CvResult>> {
    if folds < 2 || dataset.len() < folds {
        return Err(Error::InvalidArgument(format!(
            "{folds}-fold cross-validation needs at least {folds} trajectories"
        )));
    }
    if d_min_grid.is_empty() || lambda_d_grid.is_empty() || qs.is_empty() {
        return Err(Error::Empty("cross-validation grid"));
    }
    for &q in qs {
        TrainConfig { q, ..base.clone() }.validate()?;
    }
    let assignment = fold_assignment(dataset.len(), folds, base.seed ^ 0x5eed_cf01);
    let splits: Vec<(TrajectoryDataset, TrajectoryDataset)> = (0..folds)
        .map(|f| {
            let mut train_idx: Vec<usize> = (0..folds)
                .filter(|&g| g != f)
                .flat_map(|g| assignment[g].iter().copied())
                .collect();
            train_idx.sort_unstable();
            (dataset.select(&train_idx), dataset.select(&assignment[f]))
        })
        .collect();
    let mut points = vec![Vec::new(); qs.len()];
    for &d_min in d_min_grid {
        for &lambda_d in lambda_d_grid {
            let config = TrainConfig {
                d_min,
                lambdas: Lambdas {
                    diversity: lambda_d,
                    ..base.lambdas
                },
                ..base.clone()
            };
            let mut totals = vec![0.0; qs.len()];
            for (train_split, valid_split) in &splits {
                let mut model = train(featurizer.clone(), train_split, &config)?;
                for (total, &q) in totals.iter_mut().zip(qs) {
                    model.q = q;
                    *total += crate::metrics::mean_nll(&crate::behavior::prediction_batch(
                        &model,
                        valid_split,
                    )?);
                }
            }
            for (p, total) in points.iter_mut().zip(totals) {
                p.push(CvPoint {
                    d_min,
                    lambda_d,
                    score: total / folds as f64,
                });
            }
        }
    }
    Ok(points
        .into_iter()
        .map(|points| {
            let mut best = points[0];
            for p in &points[1..] {
                if p.score < best.score {
                    best = *p;
                }
            }
            CvResult { points, best }
        })
        .collect())
}

/// One prototype's entry in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSummary {
    pub prototype: usize,
    pub source: PrototypeRef,
    pub coefficients: Vec<f64>,
    pub probs: Vec<f64>,
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// CSV with one row per (prototype, action).
pub fn write_report_csv<W: Write>(rows: &[PrototypeSummary], mut w: W) -> Result<()> {
    writeln!(
        w,
        "prototype,trajectory,time,contexts,actions,action,coefficient,prob"
    )?;
    for s in rows {
        for (a, (coef, p)) in s.coefficients.iter().zip(&s.probs).enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{:e},{:e}",
                s.prototype,
                s.source.trajectory,
                s.source.time,
                join(&s.source.contexts),
                join(&s.source.actions),
                a,
                coef,
                p
            )?;
        }
    }
    Ok(())
}

/// CSV of latent encodings for downstream projection plots: one row per step,
/// then one row per prototype with `prototype` in the action column.
pub fn write_encodings_csv<W: Write>(
    model: &PrototypeModel,
    dataset: &TrajectoryDataset,
    mut w: W,
) -> Result<()> {
    let z = model.encode_dataset(dataset)?;
    let nearest = model.nearest_prototypes(&z)?;
    let dims: Vec<String> = (0..z.cols()).map(|k| format!("z{k}")).collect();
    writeln!(
        w,
        "trajectory,time,action,nearest_prototype,{}",
        dims.join(",")
    )?;
    for (r, (i, t)) in dataset.steps().enumerate() {
        let values: Vec<String> = z.row(r).iter().map(|v| format!("{v:e}")).collect();
        writeln!(
            w,
            "{i},{t},{},{},{}",
            dataset.trajectories[i].actions[t],
            nearest[r].0,
            values.join(",")
        )?;
    }
    for j in 0..model.n {
        let values: Vec<String> = model
            .latent_prototypes
            .row(j)
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        let src = &model.prototype_refs[j];
        writeln!(
            w,
            "{},{},prototype,{j},{}",
            src.trajectory,
            src.time,
            values.join(",")
        )?;
    }
    Ok(())
}
