//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation eagerly: values are computed as nodes
//! are pushed, so node indices are already a topological order. The backward
//! pass walks indices in reverse and visits each reachable node once.
//!
//! [`Graph::backward`] never mutates the graph. Every call starts from zero
//! and returns a fresh [`Gradients`], so calling it twice on different roots
//! (e.g. two losses sharing a subgraph) is well defined.

use crate::tensor::{self, broadcast_kind, Broadcast, Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId, Broadcast),
    Sub(NodeId, NodeId, Broadcast),
    Mul(NodeId, NodeId, Broadcast),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let kind = broadcast_kind("add", self.value(a), self.value(b))?;
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b, kind), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let kind = broadcast_kind("sub", self.value(a), self.value(b))?;
        let v = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(Op::Sub(a, b, kind), v))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let kind = broadcast_kind("mul", self.value(a), self.value(b))?;
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul(a, b, kind), v))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(tensor::relu);
        self.push(Op::Relu(a), v)
    }

    /// `σ_λ(x) = 1 / (1 + exp(-x/λ))`; `temperature = 1` is the plain sigmoid.
    pub fn temperature_sigmoid(&mut self, a: NodeId, temperature: f64) -> NodeId {
        let v = self
            .value(a)
            .map(|x| tensor::temperature_sigmoid(x, temperature));
        self.push(Op::Sigmoid(a, temperature), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), v)
    }

    /// Mean over every element; for a `[batch, 1]` critic output this is the
    /// batch expectation.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(Op::Mean(a), v)
    }

    /// Row sums of a `[rows, cols]` tensor, giving `[rows, 1]`.
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "sum_rows",
                shape: t.shape().to_vec(),
            }
            .into());
        }
        let data = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
        let v = Tensor::new(vec![t.rows(), 1], data)?;
        Ok(self.push(Op::SumRows(a), v))
    }

    /// `1 - a`, used for mask complements.
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let one = self.leaf(Tensor::scalar(1.0));
        self.sub(one, a)
    }

    pub fn backward(&self, root: NodeId) -> Result<Gradients, GraphError> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(GraphError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(rv.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = tensor::matmul_nt(&g, self.value(b));
                    let db = tensor::matmul_tn(self.value(a), &g);
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::Add(a, b, kind) => {
                    let db = reduce_broadcast(&g, self.value(b), kind, Side::Rhs);
                    let da = reduce_broadcast(&g, self.value(a), kind, Side::Lhs);
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::Sub(a, b, kind) => {
                    let da = reduce_broadcast(&g, self.value(a), kind, Side::Lhs);
                    let db = reduce_broadcast(&g, self.value(b), kind, Side::Rhs).map(|x| -x);
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::Mul(a, b, kind) => {
                    let (va, vb) = (self.value(a), self.value(b));
                    // dL/da = g * b and dL/db = g * a, each then reduced
                    // to its operand's shape.
                    let ga = tensor::zip_broadcast(
                        "mul",
                        &g,
                        &expand(vb, &g, kind, Side::Rhs),
                        |x, y| x * y,
                    )
                    .expect("shapes checked in forward");
                    let gb = tensor::zip_broadcast(
                        "mul",
                        &g,
                        &expand(va, &g, kind, Side::Lhs),
                        |x, y| x * y,
                    )
                    .expect("shapes checked in forward");
                    accumulate(&mut grads, a, reduce_broadcast(&ga, va, kind, Side::Lhs));
                    accumulate(&mut grads, b, reduce_broadcast(&gb, vb, kind, Side::Rhs));
                }
                Op::Scale(a, factor) => accumulate(&mut grads, a, g.map(|x| x * factor)),
                Op::Relu(a) => {
                    let va = self.value(a);
                    let d = tensor::zip_broadcast(
                        "relu",
                        &g,
                        va,
                        |gx, x| if x > 0.0 { gx } else { 0.0 },
                    )
                    .expect("same shape");
                    accumulate(&mut grads, a, d);
                }
                Op::Sigmoid(a, temperature) => {
                    let d = tensor::zip_broadcast("sigmoid", &g, &node.value, |gx, s| {
                        gx * s * (1.0 - s) / temperature
                    })
                    .expect("same shape");
                    accumulate(&mut grads, a, d);
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    accumulate(&mut grads, a, Tensor::filled(self.value(a).shape(), gv));
                }
                Op::Mean(a) => {
                    let va = self.value(a);
                    let gv = g.item() / va.len() as f64;
                    accumulate(&mut grads, a, Tensor::filled(va.shape(), gv));
                }
                Op::SumRows(a) => {
                    let va = self.value(a);
                    let cols = va.cols();
                    let data = (0..va.len()).map(|i| g.data()[i / cols]).collect();
                    accumulate(
                        &mut grads,
                        a,
                        Tensor::new(va.shape().to_vec(), data).expect("shape"),
                    );
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

#[derive(Clone, Copy)]
enum Side {
    Lhs,
    Rhs,
}

/// Broadcasts `operand` up to the shape of `full` so elementwise products line up.
fn expand(operand: &Tensor, full: &Tensor, kind: Broadcast, side: Side) -> Tensor {
    let broadcast_side = matches!(
        (kind, side),
        (Broadcast::RhsScalar, Side::Rhs)
            | (Broadcast::LhsScalar, Side::Lhs)
            | (Broadcast::RhsRow, Side::Rhs)
    );
    if !broadcast_side {
        return operand.clone();
    }
    let zeros = Tensor::zeros(full.shape());
    tensor::add(&zeros, operand).expect("broadcast checked in forward")
}

/// Sums `g` back down to the shape of the operand on `side`.
fn reduce_broadcast(g: &Tensor, operand: &Tensor, kind: Broadcast, side: Side) -> Tensor {
    match (kind, side) {
        (Broadcast::RhsScalar, Side::Rhs) | (Broadcast::LhsScalar, Side::Lhs) => {
            Tensor::filled(operand.shape(), g.data().iter().sum())
        }
        (Broadcast::RhsRow, Side::Rhs) => {
            let cols = g.cols();
            let mut out = vec![0.0; cols];
            for (i, v) in g.data().iter().enumerate() {
                out[i % cols] += v;
            }
            Tensor::new(operand.shape().to_vec(), out).expect("row shape")
        }
        _ => g.clone(),
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Result of one backward pass: `∂root/∂node` for every node the root depends on.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` when the root does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, zero-filled to `shape` when the root does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}
