//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends a node to the tape, so parents always precede
//! their consumers and a single reverse sweep over the tape is a valid
//! topological visit. The tape is rebuilt for every forward pass.

use std::collections::HashMap;

use super::linalg::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    SumRows(Var),
    Scale(Var, f64),
    Offset(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) | Op::AddRow(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::SumRows(_) => "sum_rows",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only differentiation tape.
///
/// Leaves are either differentiable variables or constants; a node requires
/// a gradient when any of its parents does, and backward only propagates
/// along those edges.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar root with respect to every differentiable leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.map.get(&leaf)
    }

    pub fn remove(&mut self, leaf: Var) -> Option<Tensor> {
        self.map.remove(&leaf)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
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

    /// Differentiable leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(Error::UnknownNode(v.0))
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node,
            });
        }
        let requires_grad = match op {
            Op::Leaf => unreachable!(),
            Op::Matmul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
            }
            Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::SumRows(a)
            | Op::Scale(a, _)
            | Op::Offset(a, _) => self.nodes[a.0].requires_grad,
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(node))
    }

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let x = self.check(a)?;
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(op, value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(&Tensor, &Tensor)> {
        let (x, y) = (self.check(a)?, self.check(b)?);
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        Ok((x, y))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.check(a)?, self.check(b)?);
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        };
        let (m, k) = x.dims2().ok_or_else(mismatch)?;
        let (k2, n) = y.dims2().ok_or_else(mismatch)?;
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, x.data(), false, y.data(), false, &mut out, false);
        self.push(Op::Matmul(a, b), Tensor::from_parts(vec![m, n], out))
    }

    /// Elementwise sum. A 1-D right operand whose length matches the
    /// columns of a 2-D left operand is broadcast over the rows (bias add);
    /// no other broadcasting is accepted.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.check(a)?, self.check(b)?);
        if x.shape() == y.shape() {
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
            let value = Tensor::from_parts(x.shape().to_vec(), data);
            return self.push(Op::Add(a, b), value);
        }
        match (x.dims2(), y.shape()) {
            (Some((_, cols)), [n]) if *n == cols => {
                let bias = y.data();
                let mut data = x.data().to_vec();
                for row in data.chunks_exact_mut(cols) {
                    row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
                }
                let value = Tensor::from_parts(x.shape().to_vec(), data);
                self.push(Op::AddRow(a, b), value)
            }
            _ => Err(Error::ShapeMismatch {
                op: "add",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            }),
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = self.same_shape("sub", a, b)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = self.same_shape("mul", a, b)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(Op::Mul(a, b), value)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Relu(a), a, |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Exp(a), a, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.check(a)?.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                node: self.nodes.len(),
            });
        }
        self.unary(Op::Log(a), a, f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Square(a), a, |v| v * v)
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.check(a)?.data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(total))
    }

    /// Row sums of a 2-D tensor: `[m, n] -> [m]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.check(a)?;
        let (m, n) = x.dims2().ok_or_else(|| Error::ShapeMismatch {
            op: "sum_rows",
            left: x.shape().to_vec(),
            right: vec![],
        })?;
        let data = if n == 0 {
            vec![0.0; m]
        } else {
            x.data().chunks_exact(n).map(|r| r.iter().sum()).collect()
        };
        self.push(Op::SumRows(a), Tensor::from_parts(vec![m], data))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary(Op::Scale(a, factor), a, |v| v * factor)
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: Var, shift: f64) -> Result<Var> {
        self.unary(Op::Offset(a, shift), a, |v| v + shift)
    }

    /// Gradients of `root` with respect to every differentiable leaf.
    /// The graph is consumed: a second call fails with
    /// [`Error::GraphConsumed`].
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let grads = self.backward_retained(root)?;
        self.consumed = true;
        Ok(grads)
    }

    /// Like [`Graph::backward`] but leaves the graph usable, so several
    /// scalars built on one forward pass can be differentiated in turn.
    pub fn backward_retained(&self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let root_value = self.check(root)?;
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else {
                if node.op == Op::Leaf {
                    out.map
                        .insert(Var(i), Tensor::zeros(node.value.shape().to_vec()));
                }
                continue;
            };
            self.propagate(node, g, &mut adj, &mut out, i);
        }
        for (i, node) in self.nodes.iter().enumerate().skip(root.0 + 1) {
            if node.op == Op::Leaf && node.requires_grad {
                out.map
                    .insert(Var(i), Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(out)
    }

    fn propagate(
        &self,
        node: &Node,
        g: Vec<f64>,
        adj: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
        index: usize,
    ) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        match node.op {
            Op::Leaf => {
                out.map
                    .insert(Var(index), Tensor::from_parts(node.value.shape().to_vec(), g));
            }
            Op::Matmul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().unwrap();
                let n = self.nodes[b.0].value.dims2().unwrap().1;
                if wants(a) {
                    // dA = G . B^T
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, &g, false, val(b), true, &mut da, false);
                    accumulate(adj, a, da);
                }
                if wants(b) {
                    // dB = A^T . G
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, val(a), true, &g, false, &mut db, false);
                    accumulate(adj, b, db);
                }
            }
            Op::Add(a, b) => {
                if wants(a) && wants(b) {
                    accumulate(adj, a, g.clone());
                    accumulate(adj, b, g);
                } else if wants(a) {
                    accumulate(adj, a, g);
                } else {
                    accumulate(adj, b, g);
                }
            }
            Op::AddRow(a, b) => {
                if wants(b) {
                    let cols = self.nodes[b.0].value.len();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks_exact(cols) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    accumulate(adj, b, db);
                }
                if wants(a) {
                    accumulate(adj, a, g);
                }
            }
            Op::Sub(a, b) => {
                if wants(b) {
                    accumulate(adj, b, g.iter().map(|v| -v).collect());
                }
                if wants(a) {
                    accumulate(adj, a, g);
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    accumulate(adj, a, zip_with(&g, val(b), |g, y| g * y));
                }
                if wants(b) {
                    accumulate(adj, b, zip_with(&g, val(a), |g, x| g * x));
                }
            }
            Op::Relu(a) => {
                let d = zip_with(&g, val(a), |g, x| if x > 0.0 { g } else { 0.0 });
                accumulate(adj, a, d);
            }
            Op::Exp(a) => {
                let d = zip_with(&g, node.value.data(), |g, y| g * y);
                accumulate(adj, a, d);
            }
            Op::Log(a) => {
                let d = zip_with(&g, val(a), |g, x| g / x);
                accumulate(adj, a, d);
            }
            Op::Square(a) => {
                let d = zip_with(&g, val(a), |g, x| 2.0 * g * x);
                accumulate(adj, a, d);
            }
            Op::Sum(a) => {
                let len = self.nodes[a.0].value.len();
                accumulate(adj, a, vec![g[0]; len]);
            }
            Op::SumRows(a) => {
                let n = self.nodes[a.0].value.dims2().unwrap().1;
                let d = g.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                accumulate(adj, a, d);
            }
            Op::Scale(a, factor) => {
                accumulate(adj, a, g.into_iter().map(|v| v * factor).collect());
            }
            Op::Offset(a, _) => accumulate(adj, a, g),
        }
    }
}

fn zip_with(g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(x).map(|(&g, &x)| f(g, x)).collect()
}

fn accumulate(adj: &mut [Option<Vec<f64>>], target: Var, contribution: Vec<f64>) {
    match &mut adj[target.0] {
        Some(existing) => existing
            .iter_mut()
            .zip(&contribution)
            .for_each(|(e, c)| *e += c),
        slot @ None => *slot = Some(contribution),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn matmul_forward() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
        assert_eq!(g.shape(c), &[1, 1]);
    }

    #[test]
    fn sum_of_squares() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![3.0, 4.0]));
        let s = g.square(x).unwrap();
        let s = g.sum(s).unwrap();
        assert_eq!(g.value(s).item(), Some(25.0));
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0, 8.0]);
    }

    #[test]
    fn square_gradient_at_three() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![3.0]));
        let s = g.square(x).unwrap();
        let s = g.sum(s).unwrap();
        assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn relu_subgradient_is_zero_at_origin() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![-1.0, 2.0, 0.0]));
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        match g.matmul(a, b) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn broadcast_only_along_batch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let bias = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let wrong = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let col = g.constant(Tensor::zeros(vec![2, 1]));
        let y = g.add(a, bias).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(g.add(a, wrong).is_err());
        assert!(g.add(a, col).is_err());
        assert!(g.add(bias, a).is_err());
        assert!(g.sub(a, bias).is_err());
    }

    #[test]
    fn log_of_non_positive_names_node() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 0.0]));
        match g.log(x) {
            Err(Error::Domain { op, node }) => {
                assert_eq!(op, "log");
                assert_eq!(node, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overflow_is_an_error_state() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1000.0]));
        assert!(matches!(g.exp(x), Err(Error::NonFinite { op: "exp", .. })));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![1.0, 2.0]));
        let y = g.square(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn consumed_graph_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![1.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::GraphConsumed)));
        assert!(matches!(g.backward_retained(s), Err(Error::GraphConsumed)));
    }

    #[test]
    fn retained_backward_can_repeat() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![2.0]));
        let s = g.square(x).unwrap();
        let s = g.sum(s).unwrap();
        let first = g.backward_retained(s).unwrap();
        let second = g.backward_retained(s).unwrap();
        assert_eq!(first.get(x), second.get(x));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![2.0]));
        let unused = g.variable(Tensor::zeros(vec![2, 2]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros(vec![2, 2]));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![2.0]));
        let c = g.constant(Tensor::vector(vec![5.0]));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[5.0]);
        assert!(grads.get(c).is_none());
        assert!(!g.requires_grad(c));
    }
}
