//! Reverse-mode automatic differentiation over scalars and dense vectors.
//!
//! A [`Tape`] records every primitive applied to its [`Value`] handles in
//! creation order, so node ids are already a topological order. Calling
//! [`Tape::backward`] on a scalar output walks the tape in reverse and
//! accumulates adjoints into one flat buffer.
//!
//! ```
//! use ranklab::grad::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(3.0).unwrap();
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.scalar_wrt(x), Some(6.0));
//! ```
//!
//! Broadcasting is limited to scalar-with-vector in the elementwise binary
//! primitives. A length-1 vector behaves like a scalar.

mod check;
mod ops;

use std::collections::BTreeMap;

use thiserror::Error;

pub use check::{grad_check, numeric_gradient};
pub use ops::stable_sigmoid;

pub type Result<T> = std::result::Result<T, GradError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradError {
    #[error("non-finite value cannot be lifted onto the tape")]
    NonFinite,
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: usize,
        right: usize,
    },
    #[error("domain violation in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward needs a scalar output, got a vector of length {0}")]
    NonScalarOutput(usize),
    #[error("node {0} does not belong to this tape")]
    UnknownNode(usize),
    #[error("function is undefined at a perturbed point: {0}")]
    Undefined(String),
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Value(usize);

impl Value {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Forward value of a node.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Scalar(_) => 1,
            Payload::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            Payload::Scalar(x) => std::slice::from_ref(x),
            Payload::Vector(v) => v,
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Payload::Scalar(x) => Some(*x),
            Payload::Vector(_) => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.is_finite())
    }
}

impl From<f64> for Payload {
    fn from(x: f64) -> Self {
        Payload::Scalar(x)
    }
}

impl From<Vec<f64>> for Payload {
    fn from(v: Vec<f64>) -> Self {
        Payload::Vector(v)
    }
}

impl From<&[f64]> for Payload {
    fn from(v: &[f64]) -> Self {
        Payload::Vector(v.to_vec())
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf { trainable: bool },
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    Div(Value, Value),
    Neg(Value),
    Scale(Value, f64),
    Shift(Value),
    DivConst(Value, f64),
    Exp(Value),
    Log(Value),
    Tanh(Value),
    Sigmoid(Value),
    Abs(Value),
    Relu(Value),
    Pow(Value, f64),
    ClampMin(Value, f64),
    Sum(Value),
    Mean(Value),
    Dot(Value, Value),
    MatVec {
        matrix: Value,
        rows: usize,
        cols: usize,
        x: Value,
    },
    Index(Value, usize),
    Stack(Vec<Value>),
}

#[derive(Debug, Clone)]
struct Node {
    payload: Payload,
    op: Op,
    offset: usize,
}

/// Append-only record of a computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    width: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Place a constant or a parameter on the tape. Trainable leaves are the
    /// ones reported by [`Tape::backward`].
    pub fn lift(&mut self, payload: impl Into<Payload>, trainable: bool) -> Result<Value> {
        let payload = payload.into();
        if !payload.is_finite() {
            return Err(GradError::NonFinite);
        }
        Ok(self.push(payload, Op::Leaf { trainable }))
    }

    pub fn param(&mut self, payload: impl Into<Payload>) -> Result<Value> {
        self.lift(payload, true)
    }

    pub fn constant(&mut self, payload: impl Into<Payload>) -> Result<Value> {
        self.lift(payload, false)
    }

    pub fn payload(&self, v: Value) -> &Payload {
        &self.nodes[v.0].payload
    }

    /// Scalar payload of `v`.
    ///
    /// Panics if `v` holds a vector.
    pub fn scalar(&self, v: Value) -> f64 {
        match self.payload(v) {
            Payload::Scalar(x) => *x,
            Payload::Vector(xs) => panic!("node {} is a vector of length {}", v.0, xs.len()),
        }
    }

    pub fn is_trainable(&self, v: Value) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf { trainable: true })
    }

    fn push(&mut self, payload: Payload, op: Op) -> Value {
        let offset = self.width;
        self.width += payload.len();
        self.nodes.push(Node {
            payload,
            op,
            offset,
        });
        Value(self.nodes.len() - 1)
    }

    fn check(&self, v: Value) -> Result<&Payload> {
        self.nodes
            .get(v.0)
            .map(|n| &n.payload)
            .ok_or(GradError::UnknownNode(v.0))
    }

    /// Adjoints of every trainable leaf with respect to the scalar `output`.
    /// Leaves that do not influence `output` get a zero adjoint.
    pub fn backward(&self, output: Value) -> Result<Gradients> {
        let out = self.check(output)?;
        if !matches!(out, Payload::Scalar(_)) {
            return Err(GradError::NonScalarOutput(out.len()));
        }
        let mut adj = vec![0.0; self.width];
        let mut touched = vec![false; self.nodes.len()];
        adj[self.nodes[output.0].offset] = 1.0;
        touched[output.0] = true;

        for id in (0..=output.0).rev() {
            if !touched[id] {
                continue;
            }
            let node = &self.nodes[id];
            if let Op::Leaf { .. } = node.op {
                continue;
            }
            let (lower, upper) = adj.split_at_mut(node.offset);
            let g = &upper[..node.payload.len()];
            ops::propagate(self, node, g, lower, &mut touched);
        }

        let mut entries = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { trainable: true } = node.op {
                let slice = &adj[node.offset..node.offset + node.payload.len()];
                let grad = match node.payload {
                    Payload::Scalar(_) => Payload::Scalar(slice[0]),
                    Payload::Vector(_) => Payload::Vector(slice.to_vec()),
                };
                entries.insert(Value(id), grad);
            }
        }
        Ok(Gradients { entries })
    }
}

/// Accumulated adjoints of the trainable leaves of one backward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    entries: BTreeMap<Value, Payload>,
}

impl Gradients {
    pub fn wrt(&self, v: Value) -> Option<&Payload> {
        self.entries.get(&v)
    }

    pub fn scalar_wrt(&self, v: Value) -> Option<f64> {
        self.wrt(v).and_then(Payload::as_scalar)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Value, &Payload)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
