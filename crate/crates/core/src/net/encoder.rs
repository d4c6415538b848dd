//! Feedforward (ReLU) and simple recurrent (tanh) history encoders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::features::{History, InputFeaturizer};
use crate::net::graph::{Graph, NodeId};
use crate::net::matrix::Matrix;
use crate::net::params::{BoundParams, ParamSet};
use crate::trajectory::TrajectoryDataset;

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Feedforward,
    Recurrent,
}

/// Left-padded batch of sequences; `masks[t][r]` is false on padding.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub steps: Vec<Matrix>,
    pub masks: Vec<Vec<bool>>,
}

impl SequenceBatch {
    pub fn batch_size(&self) -> usize {
        self.masks.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderInput {
    Rows(Matrix),
    Sequences(SequenceBatch),
}

impl EncoderInput {
    pub fn batch_size(&self) -> usize {
        match self {
            EncoderInput::Rows(m) => m.rows(),
            EncoderInput::Sequences(s) => s.batch_size(),
        }
    }
}

/// Stack of ReLU layers applied to a single input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnEncoder {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

/// Stacked Elman cells; the encoding is the top layer's final hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnEncoder {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoder {
    Feedforward(FfnEncoder),
    Recurrent(RnnEncoder),
}

/// Uniform initialization in ±sqrt(6 / (fan_in + fan_out)).
pub fn xavier<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("sized")
}

impl Encoder {
    pub fn new(kind: EncoderKind, input_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) || input_dim == 0 {
            return Err(Error::InvalidArgument(
                "encoder layers must be nonempty".into(),
            ));
        }
        Ok(match kind {
            EncoderKind::Feedforward => Encoder::Feedforward(FfnEncoder { input_dim, hidden }),
            EncoderKind::Recurrent => Encoder::Recurrent(RnnEncoder { input_dim, hidden }),
        })
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Feedforward(_) => EncoderKind::Feedforward,
            Encoder::Recurrent(_) => EncoderKind::Recurrent,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Feedforward(e) => e.input_dim,
            Encoder::Recurrent(e) => e.input_dim,
        }
    }

    fn hidden(&self) -> &[usize] {
        match self {
            Encoder::Feedforward(e) => &e.hidden,
            Encoder::Recurrent(e) => &e.hidden,
        }
    }

    pub fn latent_dim(&self) -> usize {
        *self.hidden().last().expect("nonempty")
    }

    pub fn init_params<R: Rng + ?Sized>(&self, prefix: &str, rng: &mut R, params: &mut ParamSet) {
        let mut fan_in = self.input_dim();
        for (l, &width) in self.hidden().iter().enumerate() {
            match self {
                Encoder::Feedforward(_) => {
                    params.insert(format!("{prefix}.l{l}.w"), xavier(rng, fan_in, width));
                }
                Encoder::Recurrent(_) => {
                    params.insert(format!("{prefix}.l{l}.wx"), xavier(rng, fan_in, width));
                    params.insert(format!("{prefix}.l{l}.wh"), xavier(rng, width, width));
                }
            }
            params.insert(format!("{prefix}.l{l}.b"), Matrix::zeros(1, width));
            fan_in = width;
        }
    }

    /// Records the encoder on `graph`; returns the batch × latent encoding.
    pub fn forward(
        &self,
        graph: &mut Graph,
        params: &BoundParams,
        prefix: &str,
        input: &EncoderInput,
    ) -> Result<NodeId> {
        match (self, input) {
            (Encoder::Feedforward(_), EncoderInput::Rows(x)) => {
                let x = graph.input(x.clone())?;
                self.forward_nodes(graph, params, prefix, &[x], None)
            }
            (Encoder::Recurrent(_), EncoderInput::Sequences(seq)) => {
                let xs = seq
                    .steps
                    .iter()
                    .map(|x| graph.input(x.clone()))
                    .collect::<Result<Vec<_>>>()?;
                self.forward_nodes(graph, params, prefix, &xs, Some(&seq.masks))
            }
            _ => Err(Error::InvalidArgument(
                "encoder input does not match encoder kind".into(),
            )),
        }
    }

    /// Forward pass over inputs already on the graph: a single row batch for
    /// the feedforward encoder, one node per time step for the recurrent one.
    /// Without `masks` every step is live.
    pub fn forward_nodes(
        &self,
        graph: &mut Graph,
        params: &BoundParams,
        prefix: &str,
        steps: &[NodeId],
        masks: Option<&[Vec<bool>]>,
    ) -> Result<NodeId> {
        let states = self.top_states(graph, params, prefix, steps, masks)?;
        Ok(*states.last().expect("nonempty"))
    }

    /// Top-layer output after every input step (a single entry for the
    /// feedforward encoder).
    fn top_states(
        &self,
        graph: &mut Graph,
        params: &BoundParams,
        prefix: &str,
        steps: &[NodeId],
        masks: Option<&[Vec<bool>]>,
    ) -> Result<Vec<NodeId>> {
        let Some(&first) = steps.first() else {
            return Err(Error::Empty("encoder input"));
        };
        let m = graph.value(first).rows();
        for &x in steps {
            let (rows, cols) = graph.value(x).shape();
            if cols != self.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim(),
                    actual: cols,
                });
            }
            if rows != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: rows,
                });
            }
        }
        match self {
            Encoder::Feedforward(e) => {
                if steps.len() != 1 {
                    return Err(Error::InvalidArgument(
                        "feedforward encoder takes a single input".into(),
                    ));
                }
                let mut h = first;
                for l in 0..e.hidden.len() {
                    let w = params.get(&format!("{prefix}.l{l}.w"))?;
                    let b = params.get(&format!("{prefix}.l{l}.b"))?;
                    let z = graph.matmul(h, w)?;
                    let z = graph.add_row(z, b)?;
                    h = graph.relu(z)?;
                }
                Ok(vec![h])
            }
            Encoder::Recurrent(e) => {
                if let Some(masks) = masks {
                    if masks.len() != steps.len() || masks.iter().any(|mask| mask.len() != m) {
                        return Err(Error::DimensionMismatch {
                            expected: steps.len(),
                            actual: masks.len(),
                        });
                    }
                }
                let mut states = e
                    .hidden
                    .iter()
                    .map(|&w| graph.input(Matrix::zeros(m, w)))
                    .collect::<Result<Vec<_>>>()?;
                let mut tops = Vec::with_capacity(steps.len());
                for (t, &x) in steps.iter().enumerate() {
                    let mut below = x;
                    for (l, state) in states.iter_mut().enumerate() {
                        let wx = params.get(&format!("{prefix}.l{l}.wx"))?;
                        let wh = params.get(&format!("{prefix}.l{l}.wh"))?;
                        let b = params.get(&format!("{prefix}.l{l}.b"))?;
                        let zx = graph.matmul(below, wx)?;
                        let zh = graph.matmul(*state, wh)?;
                        let z = graph.add(zx, zh)?;
                        let z = graph.add_row(z, b)?;
                        let cand = graph.tanh(z)?;
                        *state = match masks {
                            Some(masks) if masks[t].iter().any(|&live| !live) => {
                                graph.select(cand, *state, masks[t].clone())?
                            }
                            _ => cand,
                        };
                        below = *state;
                    }
                    tops.push(below);
                }
                Ok(tops)
            }
        }
    }

    /// Encoding of every prefix `h_t` of every trajectory, one row per step
    /// in [`TrajectoryDataset::steps`] order. Rows are bit-identical to
    /// encoding each history on its own.
    pub fn encode_prefixes(
        &self,
        params: &ParamSet,
        prefix: &str,
        featurizer: &InputFeaturizer,
        dataset: &TrajectoryDataset,
    ) -> Result<Matrix> {
        const CHUNK: usize = 512;
        let mut out = Matrix::zeros(dataset.n_pairs(), self.latent_dim());
        let mut row = 0;
        for chunk in dataset.trajectories.chunks(CHUNK) {
            let mut graph = Graph::new();
            let bound = params.bind(&mut graph, false)?;
            match self {
                Encoder::Feedforward(_) => {
                    let histories: Vec<History<'_>> = chunk
                        .iter()
                        .flat_map(|tr| (0..tr.len()).map(move |t| History::of(tr, t)))
                        .collect();
                    if histories.is_empty() {
                        continue;
                    }
                    let x = graph.input(featurizer.markov_input(&histories)?)?;
                    let z = self.forward_nodes(&mut graph, &bound, prefix, &[x], None)?;
                    for r in 0..histories.len() {
                        out.row_mut(row + r).copy_from_slice(graph.value(z).row(r));
                    }
                    row += histories.len();
                }
                Encoder::Recurrent(_) => {
                    let seq = featurizer.aligned_sequences(chunk)?;
                    if seq.steps.is_empty() {
                        continue;
                    }
                    let xs = seq
                        .steps
                        .iter()
                        .map(|x| graph.input(x.clone()))
                        .collect::<Result<Vec<_>>>()?;
                    let tops =
                        self.top_states(&mut graph, &bound, prefix, &xs, Some(&seq.masks))?;
                    for (r, tr) in chunk.iter().enumerate() {
                        for (t, &node) in tops.iter().take(tr.len()).enumerate() {
                            out.row_mut(row + t)
                                .copy_from_slice(graph.value(node).row(r));
                        }
                        row += tr.len();
                    }
                }
            }
        }
        Ok(out)
    }

    /// Encodings without gradient tracking; bit-identical to [`Encoder::forward`].
    pub fn encode(&self, params: &ParamSet, prefix: &str, input: &EncoderInput) -> Result<Matrix> {
        let mut graph = Graph::new();
        let bound = params.bind(&mut graph, false)?;
        let out = self.forward(&mut graph, &bound, prefix, input)?;
        Ok(graph.value(out).clone())
    }
}
