//! Append-only tape of primitive operations with reverse-mode gradients.
//!
//! Nodes are pushed during the forward pass and never mutated, so input ids
//! always reference earlier nodes and a reverse iteration over the tape is a
//! valid reverse-topological sweep.

use super::tensor::{ln_clamped, matvec_into, sigmoid, softmax_into, Tensor, LOG_CLAMP};
use crate::error::{Error, Result};

/// Handle into a [`Graph`]. Only valid for the graph that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The fixed primitive set. `IndexSelect` carries its index as an attribute
/// rather than an input because the index is not differentiable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    /// Input, parameter, or constant: no inputs, no gradient rule.
    Leaf,
    Add,
    Sub,
    /// Elementwise product of same-shaped tensors.
    Mul,
    /// Tensor times a length-1 tensor, broadcast over every entry.
    ScalarMul,
    /// `[m, n]` matrix times `[n]` vector.
    MatVec,
    Sigmoid,
    Tanh,
    /// Softmax over a rank-1 tensor, computed with max-subtraction.
    Softmax,
    /// Natural log, clamped at `LOG_CLAMP` below.
    Log,
    /// Concatenation of two rank-1 tensors.
    Concat,
    /// Sum of all entries, yielding a scalar.
    SumReduce,
    /// x -> 1 - x elementwise.
    OneMinus,
    /// Single entry of a rank-1 tensor, yielding a scalar.
    IndexSelect(usize),
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "subtract",
            Op::Mul => "elementwise-multiply",
            Op::ScalarMul => "scalar-multiply",
            Op::MatVec => "matrix-vector",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Softmax => "softmax",
            Op::Log => "log",
            Op::Concat => "concat",
            Op::SumReduce => "sum-reduce",
            Op::OneMinus => "one-minus",
            Op::IndexSelect(_) => "index-select",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// Tape of operation records plus a parallel per-node gradient slot filled in
/// by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    gradients: Vec<Option<Tensor>>,
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

    /// Registers an input/constant/parameter value on the tape.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, Vec::new(), value)
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.leaf(Tensor::scalar(value))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> Op {
        self.nodes[id.0].op
    }

    /// Gradient of the most recent `backward` loss with respect to node `id`.
    pub fn gradient(&self, id: NodeId) -> Option<&Tensor> {
        self.gradients.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value });
        id
    }

    fn shape_err(&self, op: Op, inputs: &[NodeId], details: String) -> Error {
        let shapes: Vec<&[usize]> = inputs.iter().map(|i| self.value(*i).shape()).collect();
        Error::ShapeMismatch {
            primitive: op.name(),
            details: format!("{details}; input shapes {shapes:?}"),
        }
    }

    fn arity_check(&self, op: Op, inputs: &[NodeId], want: usize) -> Result<()> {
        if inputs.len() != want {
            return Err(self.shape_err(
                op,
                inputs,
                format!("expected {want} inputs, got {}", inputs.len()),
            ));
        }
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(Error::invalid(format!(
                    "node id {} out of bounds for graph of length {}",
                    id.0,
                    self.nodes.len()
                )));
            }
        }
        Ok(())
    }

    /// Applies one primitive, growing the tape by exactly one node.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let value = match op {
            Op::Leaf => {
                return Err(Error::invalid(
                    "leaf nodes are created with Graph::leaf, not apply",
                ))
            }
            Op::Add | Op::Sub | Op::Mul => {
                self.arity_check(op, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.shape() != b.shape() {
                    return Err(self.shape_err(op, inputs, "operands must match".into()));
                }
                let f = match op {
                    Op::Add => |x: f64, y: f64| x + y,
                    Op::Sub => |x: f64, y: f64| x - y,
                    _ => |x: f64, y: f64| x * y,
                };
                let data = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| f(*x, *y))
                    .collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Op::ScalarMul => {
                self.arity_check(op, inputs, 2)?;
                let (a, s) = (self.value(inputs[0]), self.value(inputs[1]));
                if !s.is_scalar() {
                    return Err(self.shape_err(op, inputs, "second operand must be scalar".into()));
                }
                let sv = s.item();
                let data = a.data().iter().map(|x| x * sv).collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Op::MatVec => {
                self.arity_check(op, inputs, 2)?;
                let (w, x) = (self.value(inputs[0]), self.value(inputs[1]));
                if w.shape().len() != 2 || x.shape().len() != 1 || w.shape()[1] != x.shape()[0] {
                    return Err(self.shape_err(op, inputs, "need [m,n] matrix and [n] vector".into()));
                }
                let (rows, cols) = (w.shape()[0], w.shape()[1]);
                let mut out = vec![0.0; rows];
                matvec_into(w.data(), rows, cols, x.data(), &mut out);
                Tensor::vector(out)
            }
            Op::Sigmoid | Op::Tanh | Op::Log | Op::OneMinus => {
                self.arity_check(op, inputs, 1)?;
                let a = self.value(inputs[0]);
                let f = match op {
                    Op::Sigmoid => sigmoid,
                    Op::Tanh => f64::tanh,
                    Op::Log => ln_clamped,
                    _ => |x: f64| 1.0 - x,
                };
                let data = a.data().iter().map(|x| f(*x)).collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Op::Softmax => {
                self.arity_check(op, inputs, 1)?;
                let a = self.value(inputs[0]);
                if a.shape().len() != 1 || a.is_empty() {
                    return Err(self.shape_err(op, inputs, "need a non-empty vector".into()));
                }
                let mut out = vec![0.0; a.len()];
                softmax_into(a.data(), &mut out);
                Tensor::vector(out)
            }
            Op::Concat => {
                self.arity_check(op, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.shape().len() != 1 || b.shape().len() != 1 {
                    return Err(self.shape_err(op, inputs, "need two vectors".into()));
                }
                let mut data = Vec::with_capacity(a.len() + b.len());
                data.extend_from_slice(a.data());
                data.extend_from_slice(b.data());
                Tensor::vector(data)
            }
            Op::SumReduce => {
                self.arity_check(op, inputs, 1)?;
                let a = self.value(inputs[0]);
                Tensor::scalar(a.data().iter().sum())
            }
            Op::IndexSelect(idx) => {
                self.arity_check(op, inputs, 1)?;
                let a = self.value(inputs[0]);
                if a.shape().len() != 1 || idx >= a.len() {
                    return Err(self.shape_err(
                        op,
                        inputs,
                        format!("index {idx} out of bounds for vector"),
                    ));
                }
                Tensor::scalar(a.data()[idx])
            }
        };
        Ok(self.push(op, inputs.to_vec(), value))
    }

    // Convenience wrappers, one per primitive.

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scalar_mul(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        self.apply(Op::ScalarMul, &[a, s])
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        self.apply(Op::MatVec, &[w, x])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Softmax, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Log, &[a])
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Concat, &[a, b])
    }

    pub fn sum_reduce(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::SumReduce, &[a])
    }

    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::OneMinus, &[a])
    }

    pub fn index_select(&mut self, a: NodeId, idx: usize) -> Result<NodeId> {
        self.apply(Op::IndexSelect(idx), &[a])
    }

    /// Reverse sweep from a scalar loss. Every node gets a gradient slot of
    /// matching shape; nodes unreachable from the loss keep zero gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid("loss node id out of bounds"));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }

        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            // Upstream gradient is read before input slots are touched; a
            // node never appears among its own inputs.
            let g = std::mem::replace(&mut grads[i], Tensor::zeros(node.value.shape()));
            let inputs = node.inputs.clone();
            let op = node.op;
            match op {
                Op::Leaf => unreachable!(),
                Op::Add => {
                    accumulate(&mut grads[inputs[0].0], g.data(), 1.0);
                    accumulate(&mut grads[inputs[1].0], g.data(), 1.0);
                }
                Op::Sub => {
                    accumulate(&mut grads[inputs[0].0], g.data(), 1.0);
                    accumulate(&mut grads[inputs[1].0], g.data(), -1.0);
                }
                Op::Mul => {
                    let a = self.nodes[inputs[0].0].value.clone();
                    let b = &self.nodes[inputs[1].0].value;
                    for ((ga, gv), bv) in grads[inputs[0].0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(b.data())
                    {
                        *ga += gv * bv;
                    }
                    for ((gb, gv), av) in grads[inputs[1].0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(a.data())
                    {
                        *gb += gv * av;
                    }
                }
                Op::ScalarMul => {
                    let sv = self.nodes[inputs[1].0].value.item();
                    let a = &self.nodes[inputs[0].0].value;
                    let mut ds = 0.0;
                    for (gv, av) in g.data().iter().zip(a.data()) {
                        ds += gv * av;
                    }
                    accumulate(&mut grads[inputs[0].0], g.data(), sv);
                    grads[inputs[1].0].data_mut()[0] += ds;
                }
                Op::MatVec => {
                    let w = &self.nodes[inputs[0].0].value;
                    let x = &self.nodes[inputs[1].0].value;
                    let (rows, cols) = (w.shape()[0], w.shape()[1]);
                    {
                        let dw = grads[inputs[0].0].data_mut();
                        for r in 0..rows {
                            let gr = g.data()[r];
                            let row = &mut dw[r * cols..(r + 1) * cols];
                            for (d, xv) in row.iter_mut().zip(x.data()) {
                                *d += gr * xv;
                            }
                        }
                    }
                    let w = self.nodes[inputs[0].0].value.clone();
                    let dx = grads[inputs[1].0].data_mut();
                    for r in 0..rows {
                        let gr = g.data()[r];
                        let row = &w.data()[r * cols..(r + 1) * cols];
                        for (d, wv) in dx.iter_mut().zip(row) {
                            *d += gr * wv;
                        }
                    }
                }
                Op::Sigmoid => {
                    let out = self.nodes[i].value.clone();
                    for ((d, gv), s) in grads[inputs[0].0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(out.data())
                    {
                        *d += gv * s * (1.0 - s);
                    }
                }
                Op::Tanh => {
                    let out = self.nodes[i].value.clone();
                    for ((d, gv), t) in grads[inputs[0].0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(out.data())
                    {
                        *d += gv * (1.0 - t * t);
                    }
                }
                Op::Softmax => {
                    let s = self.nodes[i].value.clone();
                    let dot: f64 = g.data().iter().zip(s.data()).map(|(gv, sv)| gv * sv).sum();
                    for ((d, gv), sv) in grads[inputs[0].0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(s.data())
                    {
                        *d += sv * (gv - dot);
                    }
                }
                Op::Log => {
                    let x = self.nodes[inputs[0].0].value.clone();
                    for ((d, gv), xv) in grads[inputs[0].0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(x.data())
                    {
                        // Zero slope on the clamped branch.
                        if *xv > LOG_CLAMP {
                            *d += gv / xv;
                        }
                    }
                }
                Op::Concat => {
                    let n = self.nodes[inputs[0].0].value.len();
                    accumulate(&mut grads[inputs[0].0], &g.data()[..n], 1.0);
                    accumulate(&mut grads[inputs[1].0], &g.data()[n..], 1.0);
                }
                Op::SumReduce => {
                    let gv = g.data()[0];
                    for d in grads[inputs[0].0].data_mut() {
                        *d += gv;
                    }
                }
                Op::OneMinus => {
                    accumulate(&mut grads[inputs[0].0], g.data(), -1.0);
                }
                Op::IndexSelect(idx) => {
                    grads[inputs[0].0].data_mut()[idx] += g.data()[0];
                }
            }
        }

        self.gradients = grads.into_iter().map(Some).collect();
        // Nodes past the loss were never swept; they keep zero gradients,
        // which already matches the unreachable-node contract.
        while self.gradients.len() < self.nodes.len() {
            let shape = self.nodes[self.gradients.len()].value.shape().to_vec();
            self.gradients.push(Some(Tensor::zeros(&shape)));
        }
        Ok(())
    }
}

fn accumulate(into: &mut Tensor, from: &[f64], scale: f64) {
    for (d, s) in into.data_mut().iter_mut().zip(from) {
        *d += s * scale;
    }
}
