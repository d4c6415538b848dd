use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::graph::{Graph, NodeId};
use crate::net::matrix::Matrix;

/// Named parameter matrices, ordered by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    entries: BTreeMap<String, Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Matrix::is_finite)
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|m| m.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_same_shapes(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::DimensionMismatch {
                expected: self.entries.len(),
                actual: other.entries.len(),
            });
        }
        for ((ka, va), (kb, vb)) in self.entries.iter().zip(&other.entries) {
            if ka != kb {
                return Err(Error::InvalidArgument(format!(
                    "parameter {ka} paired with {kb}"
                )));
            }
            if va.shape() != vb.shape() {
                return Err(Error::DimensionMismatch {
                    expected: va.data().len(),
                    actual: vb.data().len(),
                });
            }
        }
        Ok(())
    }

    /// Places every parameter on the graph, tracked (`differentiable`) or as constants.
    pub fn bind(&self, graph: &mut Graph, differentiable: bool) -> Result<BoundParams> {
        let mut nodes = BTreeMap::new();
        for (name, value) in &self.entries {
            let id = if differentiable {
                graph.param(value.clone())?
            } else {
                graph.input(value.clone())?
            };
            nodes.insert(name.clone(), id);
        }
        Ok(BoundParams { nodes })
    }
}

/// Graph node for each parameter name.
#[derive(Debug, Clone)]
pub struct BoundParams {
    nodes: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unbound parameter {name}")))
    }
}

/// Evaluates `build` on `params` and returns the scalar loss together with
/// its gradient for every parameter. Parameters the loss does not depend on
/// get a zero gradient.
pub fn loss_and_grad<F>(params: &ParamSet, build: F) -> Result<(f64, ParamSet)>
where
    F: FnOnce(&mut Graph, &BoundParams) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let bound = params.bind(&mut graph, true)?;
    let loss = build(&mut graph, &bound)?;
    let value = graph.scalar(loss);
    let grads = graph.backward(loss)?;
    let mut out = params.zeros_like();
    for (name, g) in out.iter_mut() {
        if let Some(d) = grads.get(bound.get(name)?) {
            *g = d.clone();
        }
    }
    Ok((value, out))
}
