//! Reverse-mode differentiation over an explicitly recorded trace.
//!
//! Every primitive is appended to a [`Trace`] together with its forward
//! value. [`Trace::backward`] walks the node list once in reverse, which is
//! a reverse topological order because a node can only reference earlier
//! nodes. Forward values are produced by a single `eval` routine that
//! [`Trace::replay`] reuses, so replaying reproduces the recorded values
//! bit for bit.

use std::sync::Arc;

use super::linalg::{sigmoid, softplus, Matrix, Vector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Vector(Vector),
    Matrix(Arc<Matrix>),
}

impl Value {
    pub fn as_vector(&self) -> &Vector {
        match self {
            Value::Vector(v) => v,
            Value::Matrix(_) => panic!("expected a vector node, found a matrix"),
        }
    }

    pub fn as_matrix(&self) -> &Matrix {
        match self {
            Value::Matrix(m) => m,
            Value::Vector(_) => panic!("expected a matrix node, found a vector"),
        }
    }

    fn len(&self) -> usize {
        match self {
            Value::Vector(v) => v.len(),
            Value::Matrix(m) => m.rows() * m.cols(),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `1 - x`
    OneMinus(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Softplus(NodeId),
    Clamp(NodeId, f64, f64),
    SqNorm(NodeId),
    Dot(NodeId, NodeId),
    Sum(NodeId),
    Concat(NodeId, NodeId),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match *self {
            Leaf => vec![],
            MatVec(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Dot(a, b) | Concat(a, b) => {
                vec![a, b]
            }
            Scale(a, _) | OneMinus(a) | Sigmoid(a) | Tanh(a) | Exp(a) | Softplus(a)
            | Clamp(a, _, _) | SqNorm(a) | Sum(a) => vec![a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Value,
    needs_grad: bool,
}

/// A recorded computation graph.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    nodes: Vec<Node>,
}

fn map(v: &Vector, f: impl Fn(f64) -> f64) -> Vector {
    Vector::new(v.iter().map(|&x| f(x)).collect())
}

fn zip(a: &Vector, b: &Vector, f: impl Fn(f64, f64) -> f64) -> Vector {
    assert_eq!(a.len(), b.len(), "elementwise op on mismatched lengths");
    Vector::new(a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect())
}

fn eval<'a>(op: &Op, get: impl Fn(NodeId) -> &'a Value) -> Value {
    use Op::*;
    let v = |id: NodeId| get(id).as_vector();
    let out = match *op {
        Leaf => unreachable!("leaves carry their own value"),
        MatVec(m, x) => {
            let m = get(m).as_matrix();
            assert_eq!(m.cols(), v(x).len(), "matvec shape mismatch");
            m.matvec(v(x))
        }
        Add(a, b) => zip(v(a), v(b), |x, y| x + y),
        Sub(a, b) => zip(v(a), v(b), |x, y| x - y),
        Mul(a, b) => zip(v(a), v(b), |x, y| x * y),
        Scale(a, s) => map(v(a), |x| s * x),
        OneMinus(a) => map(v(a), |x| 1.0 - x),
        Sigmoid(a) => map(v(a), sigmoid),
        Tanh(a) => map(v(a), f64::tanh),
        Exp(a) => map(v(a), f64::exp),
        Softplus(a) => map(v(a), softplus),
        Clamp(a, lo, hi) => map(v(a), |x| x.clamp(lo, hi)),
        SqNorm(a) => Vector::new(vec![v(a).norm_sq()]),
        Dot(a, b) => Vector::new(vec![v(a).dot(v(b))]),
        Sum(a) => Vector::new(vec![v(a).iter().sum()]),
        Concat(a, b) => v(a).concat(v(b)),
    };
    Value::Vector(out)
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Value, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// A vector input whose gradient is wanted.
    pub fn input(&mut self, v: Vector) -> NodeId {
        self.leaf(Value::Vector(v), true)
    }

    pub fn constant(&mut self, v: Vector) -> NodeId {
        self.leaf(Value::Vector(v), false)
    }

    pub fn matrix_input(&mut self, m: Arc<Matrix>) -> NodeId {
        self.leaf(Value::Matrix(m), true)
    }

    pub fn matrix_constant(&mut self, m: Arc<Matrix>) -> NodeId {
        self.leaf(Value::Matrix(m), false)
    }

    fn push(&mut self, op: Op) -> NodeId {
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        let value = eval(&op, |id| &self.nodes[id.0].value);
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id.0].value
    }

    pub fn vector(&self, id: NodeId) -> &Vector {
        self.nodes[id.0].value.as_vector()
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.vector(id);
        assert_eq!(v.len(), 1, "node {} is not scalar", id.0);
        v[0]
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> NodeId {
        self.push(Op::MatVec(m, x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::Scale(a, s))
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.push(Op::Clamp(a, lo, hi))
    }

    pub fn sq_norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SqNorm(a))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Dot(a, b))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Concat(a, b))
    }

    /// `W x + b`
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> NodeId {
        let wx = self.matvec(w, x);
        self.add(wx, b)
    }

    /// `‖a − b‖²`
    pub fn sq_dist(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        self.sq_norm(d)
    }

    /// `Σ cᵢ sᵢ` over scalar nodes; `None` when `terms` is empty.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Option<NodeId> {
        let mut acc: Option<NodeId> = None;
        for &(id, c) in terms {
            let t = if c == 1.0 { id } else { self.scale(id, c) };
            acc = Some(match acc {
                None => t,
                Some(a) => self.add(a, t),
            });
        }
        acc
    }

    /// Recompute every node from the recorded leaves.
    pub fn replay(&self) -> Vec<Value> {
        self.replay_with(&[])
    }

    /// Recompute with some leaf values replaced.
    pub fn replay_with(&self, overrides: &[(NodeId, Value)]) -> Vec<Value> {
        let mut values: Vec<Value> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = match node.op {
                Op::Leaf => overrides
                    .iter()
                    .find(|(id, _)| id.0 == i)
                    .map(|(_, v)| {
                        assert_eq!(v.len(), node.value.len(), "override shape mismatch");
                        v.clone()
                    })
                    .unwrap_or_else(|| node.value.clone()),
                ref op => eval(op, |id| &values[id.0]),
            };
            values.push(v);
        }
        values
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out_len = self.nodes[output.0].value.len();
        if out_len != 1 || matches!(self.nodes[output.0].value, Value::Matrix(_)) {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, node {} has {} entries",
                output.0, out_len
            )));
        }
        let mut adj: Vec<Option<Grad>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Grad::Vector(vec![1.0]));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if let Op::Leaf = node.op {
                adj[i] = Some(g);
                continue;
            }
            let g = g.into_vector();
            self.propagate(&node.op, &node.value, &g, &mut adj);
            // keep intermediate adjoints available to callers
            adj[i] = Some(Grad::Vector(g));
        }
        Ok(Gradients { adj, shapes: self.nodes.iter().map(|n| shape_of(&n.value)).collect() })
    }

    fn propagate(&self, op: &Op, out: &Value, g: &[f64], adj: &mut [Option<Grad>]) {
        use Op::*;
        let val = |id: NodeId| self.nodes[id.0].value.as_vector();
        let needs = |id: NodeId| self.nodes[id.0].needs_grad;
        let y = out.as_vector();
        match *op {
            Leaf => {}
            MatVec(m, x) => {
                let mat = self.nodes[m.0].value.as_matrix();
                let gv = Vector::new(g.to_vec());
                if needs(x) {
                    accumulate_vec(adj, x, mat.matvec_t(&gv).as_slice());
                }
                if needs(m) {
                    let xv = val(x);
                    let slot = adj[m.0].get_or_insert_with(|| {
                        Grad::Matrix(Matrix::zeros(mat.rows(), mat.cols()))
                    });
                    match slot {
                        Grad::Matrix(gm) => gm.add_outer(1.0, &gv, xv),
                        Grad::Vector(_) => unreachable!(),
                    }
                }
            }
            Add(a, b) => {
                if needs(a) {
                    accumulate_vec(adj, a, g);
                }
                if needs(b) {
                    accumulate_vec(adj, b, g);
                }
            }
            Sub(a, b) => {
                if needs(a) {
                    accumulate_vec(adj, a, g);
                }
                if needs(b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate_vec(adj, b, &neg);
                }
            }
            Mul(a, b) => {
                if needs(a) {
                    let d: Vec<f64> = g.iter().zip(val(b).iter()).map(|(g, b)| g * b).collect();
                    accumulate_vec(adj, a, &d);
                }
                if needs(b) {
                    let d: Vec<f64> = g.iter().zip(val(a).iter()).map(|(g, a)| g * a).collect();
                    accumulate_vec(adj, b, &d);
                }
            }
            Scale(a, s) => {
                let d: Vec<f64> = g.iter().map(|g| g * s).collect();
                accumulate_vec(adj, a, &d);
            }
            OneMinus(a) => {
                let d: Vec<f64> = g.iter().map(|g| -g).collect();
                accumulate_vec(adj, a, &d);
            }
            Sigmoid(a) => {
                let d: Vec<f64> = g.iter().zip(y.iter()).map(|(g, s)| g * s * (1.0 - s)).collect();
                accumulate_vec(adj, a, &d);
            }
            Tanh(a) => {
                let d: Vec<f64> = g.iter().zip(y.iter()).map(|(g, t)| g * (1.0 - t * t)).collect();
                accumulate_vec(adj, a, &d);
            }
            Exp(a) => {
                let d: Vec<f64> = g.iter().zip(y.iter()).map(|(g, e)| g * e).collect();
                accumulate_vec(adj, a, &d);
            }
            Softplus(a) => {
                let d: Vec<f64> =
                    g.iter().zip(val(a).iter()).map(|(g, &x)| g * sigmoid(x)).collect();
                accumulate_vec(adj, a, &d);
            }
            Clamp(a, lo, hi) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(a).iter())
                    .map(|(g, &x)| if (lo..=hi).contains(&x) { *g } else { 0.0 })
                    .collect();
                accumulate_vec(adj, a, &d);
            }
            SqNorm(a) => {
                let d: Vec<f64> = val(a).iter().map(|x| 2.0 * g[0] * x).collect();
                accumulate_vec(adj, a, &d);
            }
            Dot(a, b) => {
                if needs(a) {
                    let d: Vec<f64> = val(b).iter().map(|x| g[0] * x).collect();
                    accumulate_vec(adj, a, &d);
                }
                if needs(b) {
                    let d: Vec<f64> = val(a).iter().map(|x| g[0] * x).collect();
                    accumulate_vec(adj, b, &d);
                }
            }
            Sum(a) => {
                let d = vec![g[0]; val(a).len()];
                accumulate_vec(adj, a, &d);
            }
            Concat(a, b) => {
                let na = val(a).len();
                if needs(a) {
                    accumulate_vec(adj, a, &g[..na]);
                }
                if needs(b) {
                    accumulate_vec(adj, b, &g[na..]);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

fn shape_of(v: &Value) -> Shape {
    match v {
        Value::Vector(v) => Shape::Vector(v.len()),
        Value::Matrix(m) => Shape::Matrix(m.rows(), m.cols()),
    }
}

#[derive(Debug, Clone)]
enum Grad {
    Vector(Vec<f64>),
    Matrix(Matrix),
}

impl Grad {
    fn into_vector(self) -> Vec<f64> {
        match self {
            Grad::Vector(v) => v,
            Grad::Matrix(_) => panic!("matrix adjoint on a vector node"),
        }
    }
}

fn accumulate_vec(adj: &mut [Option<Grad>], id: NodeId, d: &[f64]) {
    match &mut adj[id.0] {
        Some(Grad::Vector(acc)) => {
            for (a, b) in acc.iter_mut().zip(d) {
                *a += b;
            }
        }
        Some(Grad::Matrix(_)) => unreachable!("vector adjoint on a matrix node"),
        slot @ None => *slot = Some(Grad::Vector(d.to_vec())),
    }
}

/// Result of [`Trace::backward`]. Nodes the output does not depend on
/// report zero gradients.
#[derive(Debug, Clone)]
pub struct Gradients {
    adj: Vec<Option<Grad>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    pub fn vector(&self, id: NodeId) -> Vector {
        match self.adj.get(id.0) {
            Some(Some(Grad::Vector(v))) => Vector::new(v.clone()),
            _ => match self.shapes[id.0] {
                Shape::Vector(n) => Vector::zeros(n),
                Shape::Matrix(..) => panic!("node {} is a matrix", id.0),
            },
        }
    }

    pub fn matrix(&self, id: NodeId) -> Matrix {
        match self.adj.get(id.0) {
            Some(Some(Grad::Matrix(m))) => m.clone(),
            _ => match self.shapes[id.0] {
                Shape::Matrix(r, c) => Matrix::zeros(r, c),
                Shape::Vector(_) => panic!("node {} is a vector", id.0),
            },
        }
    }

    /// Move a matrix gradient out without cloning.
    pub fn take_matrix(&mut self, id: NodeId) -> Matrix {
        match self.adj.get_mut(id.0).and_then(Option::take) {
            Some(Grad::Matrix(m)) => m,
            _ => match self.shapes[id.0] {
                Shape::Matrix(r, c) => Matrix::zeros(r, c),
                Shape::Vector(_) => panic!("node {} is a vector", id.0),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_objective_has_zero_gradient() {
        let mut t = Trace::new();
        let x = t.input(Vector::new(vec![1.0, 2.0]));
        let c = t.constant(Vector::new(vec![3.0]));
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.vector(x).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn squared_norm_gradient_is_twice_x() {
        let mut t = Trace::new();
        let x = t.input(Vector::new(vec![1.5, -2.0, 0.25]));
        let n = t.sq_norm(x);
        let g = t.backward(n).unwrap();
        assert_eq!(g.vector(x).as_slice(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut t = Trace::new();
        let x = t.input(Vector::new(vec![1.0, 2.0]));
        let y = t.tanh(x);
        assert!(matches!(t.backward(y), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = x·x + x·x  → 4x
        let mut t = Trace::new();
        let x = t.input(Vector::new(vec![2.0]));
        let a = t.dot(x, x);
        let b = t.add(a, a);
        let g = t.backward(b).unwrap();
        assert_eq!(g.vector(x).as_slice(), &[8.0]);
    }

    #[test]
    fn matvec_gradients() {
        let m = Arc::new(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mut t = Trace::new();
        let mi = t.matrix_input(m);
        let x = t.input(Vector::new(vec![1.0, -1.0]));
        let y = t.matvec(mi, x);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.vector(x).as_slice(), &[4.0, 6.0]);
        assert_eq!(g.matrix(mi).as_slice(), &[1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn replay_is_bit_exact() {
        let mut t = Trace::new();
        let x = t.input(Vector::new(vec![0.3, -0.7, 1.1]));
        let s = t.sigmoid(x);
        let th = t.tanh(x);
        let p = t.mul(s, th);
        let e = t.exp(p);
        let c = t.clamp(e, 0.9, 1.2);
        let n = t.sq_norm(c);
        let replayed = t.replay();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v, t.value(NodeId(i)));
        }
        assert_eq!(replayed[n.0], *t.value(n));
    }

    #[test]
    fn replay_with_override_changes_downstream() {
        let mut t = Trace::new();
        let x = t.input(Vector::new(vec![1.0]));
        let y = t.scale(x, 3.0);
        let vals = t.replay_with(&[(x, Value::Vector(Vector::new(vec![2.0])))]);
        assert_eq!(vals[y.0].as_vector()[0], 6.0);
    }
}
