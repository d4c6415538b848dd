//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! walks the tape in reverse and accumulates adjoints. Values are checked for
//! finiteness as they are produced so a NaN never propagates silently.

use crate::error::{Error, Result};
use crate::net::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    SqDists(usize, usize),
    /// Row `r` comes from `new` where `mask[r]`, otherwise from `old`.
    Select {
        new: usize,
        old: usize,
        mask: Vec<bool>,
    },
    /// Mean negative log-likelihood of `labels` under row-wise softmax.
    SoftmaxNll {
        logits: usize,
        labels: Vec<usize>,
        probs: Matrix,
    },
    /// Σ_rows min_col; `arg[r]` is the minimizing column.
    RowMinSum {
        input: usize,
        arg: Vec<usize>,
    },
    /// Σ_cols min_row; `arg[c]` is the minimizing row.
    ColMinSum {
        input: usize,
        arg: Vec<usize>,
    },
    /// Σ_{i<j} max(0, d_min − ‖z_i − z_j‖)².
    Diversity {
        input: usize,
        d_min: f64,
    },
    Sum(usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulBt(..) => "matmul_bt",
        Op::AddRow(..) => "add_row",
        Op::Add(..) => "add",
        Op::Scale(..) => "scale",
        Op::Relu(..) => "relu",
        Op::Tanh(..) => "tanh",
        Op::Exp(..) => "exp",
        Op::SqDists(..) => "sq_dists",
        Op::Select { .. } => "select",
        Op::SoftmaxNll { .. } => "softmax_nll",
        Op::RowMinSum { .. } => "row_min_sum",
        Op::ColMinSum { .. } => "col_min_sum",
        Op::Diversity { .. } => "diversity",
        Op::Sum(..) => "sum",
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op_name(&op).to_string()));
        }
        self.nodes.push(Node { value, op, tracked });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].tracked)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Matrix) -> Result<NodeId> {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Result<NodeId> {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.get(0, 0)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(&[a.0, b.0]);
        self.push(v, Op::MatMul(a.0, b.0), t)
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_bt(self.value(b))?;
        let t = self.tracked(&[a.0, b.0]);
        self.push(v, Op::MatMulBt(a.0, b.0), t)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row(self.value(row))?;
        let t = self.tracked(&[a.0, row.0]);
        self.push(v, Op::AddRow(a.0, row.0), t)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let t = self.tracked(&[a.0, b.0]);
        self.push(v, Op::Add(a.0, b.0), t)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let v = self.value(a).scale(factor);
        let t = self.tracked(&[a.0]);
        self.push(v, Op::Scale(a.0, factor), t)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.max(0.0));
        let t = self.tracked(&[a.0]);
        self.push(v, Op::Relu(a.0), t)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::tanh);
        let t = self.tracked(&[a.0]);
        self.push(v, Op::Tanh(a.0), t)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::exp);
        let t = self.tracked(&[a.0]);
        self.push(v, Op::Exp(a.0), t)
    }

    pub fn sq_dists(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sq_dists(self.value(b))?;
        let t = self.tracked(&[a.0, b.0]);
        self.push(v, Op::SqDists(a.0, b.0), t)
    }

    pub fn select(&mut self, new: NodeId, old: NodeId, mask: Vec<bool>) -> Result<NodeId> {
        let (nv, ov) = (self.value(new), self.value(old));
        if nv.shape() != ov.shape() || mask.len() != nv.rows() {
            return Err(Error::DimensionMismatch {
                expected: nv.rows(),
                actual: mask.len(),
            });
        }
        let mut v = ov.clone();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                v.row_mut(r).copy_from_slice(nv.row(r));
            }
        }
        let t = self.tracked(&[new.0, old.0]);
        self.push(
            v,
            Op::Select {
                new: new.0,
                old: old.0,
                mask,
            },
            t,
        )
    }

    pub fn softmax_nll(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() || lv.rows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: lv.rows(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= lv.cols()) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range")));
        }
        let probs = softmax_rows(lv);
        let mut total = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = lv.row(r);
            total += log_sum_exp(row) - row[l];
        }
        let v = Matrix::scalar(total / labels.len() as f64);
        let t = self.tracked(&[logits.0]);
        self.push(
            v,
            Op::SoftmaxNll {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            t,
        )
    }

    pub fn row_min_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.cols() == 0 {
            return Err(Error::Empty("row_min_sum input"));
        }
        let arg: Vec<usize> = (0..v.rows()).map(|r| argmin(v.row(r))).collect();
        let total = arg.iter().enumerate().map(|(r, &c)| v.get(r, c)).sum();
        let t = self.tracked(&[a.0]);
        self.push(Matrix::scalar(total), Op::RowMinSum { input: a.0, arg }, t)
    }

    pub fn col_min_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.rows() == 0 {
            return Err(Error::Empty("col_min_sum input"));
        }
        let arg: Vec<usize> = (0..v.cols())
            .map(|c| {
                let mut best = 0;
                for r in 1..v.rows() {
                    if v.get(r, c) < v.get(best, c) {
                        best = r;
                    }
                }
                best
            })
            .collect();
        let total = arg.iter().enumerate().map(|(c, &r)| v.get(r, c)).sum();
        let t = self.tracked(&[a.0]);
        self.push(Matrix::scalar(total), Op::ColMinSum { input: a.0, arg }, t)
    }

    pub fn diversity(&mut self, z: NodeId, d_min: f64) -> Result<NodeId> {
        let v = self.value(z);
        let mut total = 0.0;
        for i in 0..v.rows() {
            for j in i + 1..v.rows() {
                let d = pair_distance(v.row(i), v.row(j));
                let gap = (d_min - d).max(0.0);
                total += gap * gap;
            }
        }
        let t = self.tracked(&[z.0]);
        self.push(
            Matrix::scalar(total),
            Op::Diversity { input: z.0, d_min },
            t,
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total = self.value(a).sum();
        let t = self.tracked(&[a.0]);
        self.push(Matrix::scalar(total), Op::Sum(a.0), t)
    }

    /// Adjoints of a scalar node with respect to every tracked node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::InvalidArgument(
                "backward requires a scalar loss".into(),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = |target: usize, contribution: Matrix| -> Result<()> {
                if !self.nodes[target].tracked {
                    return Ok(());
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&contribution),
                    slot @ None => {
                        *slot = Some(contribution);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.nodes[*a].tracked {
                        acc(*a, g.matmul_bt(bv)?)?;
                    }
                    if self.nodes[*b].tracked {
                        acc(*b, av.matmul_at(&g)?)?;
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.nodes[*a].tracked {
                        acc(*a, g.matmul(bv)?)?;
                    }
                    if self.nodes[*b].tracked {
                        acc(*b, g.matmul_at(av)?)?;
                    }
                }
                Op::AddRow(a, row) => {
                    if self.nodes[*row].tracked {
                        let mut rg = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, v) in rg.row_mut(0).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        acc(*row, rg)?;
                    }
                    acc(*a, g)?;
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone())?;
                    acc(*a, g)?;
                }
                Op::Scale(a, f) => acc(*a, g.scale(*f))?,
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let mut out = g;
                    for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    acc(*a, out)?;
                }
                Op::Tanh(a) => {
                    let mut out = g;
                    for (o, &y) in out.data_mut().iter_mut().zip(node.value.data()) {
                        *o *= 1.0 - y * y;
                    }
                    acc(*a, out)?;
                }
                Op::Exp(a) => {
                    let mut out = g;
                    for (o, &y) in out.data_mut().iter_mut().zip(node.value.data()) {
                        *o *= y;
                    }
                    acc(*a, out)?;
                }
                Op::SqDists(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    for i in 0..av.rows() {
                        for j in 0..bv.rows() {
                            let gij = g.get(i, j);
                            if gij == 0.0 {
                                continue;
                            }
                            for k in 0..av.cols() {
                                let d = 2.0 * gij * (av.get(i, k) - bv.get(j, k));
                                ga.data_mut()[i * av.cols() + k] += d;
                                gb.data_mut()[j * bv.cols() + k] -= d;
                            }
                        }
                    }
                    acc(*a, ga)?;
                    acc(*b, gb)?;
                }
                Op::Select { new, old, mask } => {
                    let mut gn = Matrix::zeros(g.rows(), g.cols());
                    let mut go = g;
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            gn.row_mut(r).copy_from_slice(go.row(r));
                            go.row_mut(r).fill(0.0);
                        }
                    }
                    acc(*new, gn)?;
                    acc(*old, go)?;
                }
                Op::SoftmaxNll {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.get(0, 0) / labels.len() as f64;
                    let mut out = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        out.data_mut()[r * probs.cols() + l] -= 1.0;
                    }
                    acc(*logits, out.scale(scale))?;
                }
                Op::RowMinSum { input, arg } => {
                    let iv = &self.nodes[*input].value;
                    let mut out = Matrix::zeros(iv.rows(), iv.cols());
                    for (r, &c) in arg.iter().enumerate() {
                        out.set(r, c, g.get(0, 0));
                    }
                    acc(*input, out)?;
                }
                Op::ColMinSum { input, arg } => {
                    let iv = &self.nodes[*input].value;
                    let mut out = Matrix::zeros(iv.rows(), iv.cols());
                    for (c, &r) in arg.iter().enumerate() {
                        out.set(r, c, out.get(r, c) + g.get(0, 0));
                    }
                    acc(*input, out)?;
                }
                Op::Diversity { input, d_min } => {
                    let z = &self.nodes[*input].value;
                    let mut out = Matrix::zeros(z.rows(), z.cols());
                    for i in 0..z.rows() {
                        for j in i + 1..z.rows() {
                            let d = pair_distance(z.row(i), z.row(j));
                            if d >= *d_min || d == 0.0 {
                                continue;
                            }
                            // d/dz_i (d_min − d)² = −2 (d_min − d) (z_i − z_j) / d
                            let coef = -2.0 * (d_min - d) / d * g.get(0, 0);
                            for k in 0..z.cols() {
                                let diff = coef * (z.get(i, k) - z.get(j, k));
                                out.data_mut()[i * z.cols() + k] += diff;
                                out.data_mut()[j * z.cols() + k] -= diff;
                            }
                        }
                    }
                    acc(*input, out)?;
                }
                Op::Sum(a) => {
                    let av = &self.nodes[*a].value;
                    acc(*a, Matrix::filled(av.rows(), av.cols(), g.get(0, 0)))?;
                }
            }
        }
        for (g, n) in grads.iter().zip(&self.nodes) {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {}", op_name(&n.op))));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` when the node did not influence the loss.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

fn pair_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
