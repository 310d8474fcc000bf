//! Reverse-mode gradient tape over a closed operation vocabulary.
//!
//! A [`Tape`] records each operation as it executes and keeps every
//! intermediate value. [`Tape::backward`] consumes the tape, walks the
//! record in exact reverse order and returns the parameter gradients as
//! [`Grads`], which can be accumulated into the owning [`Param`]s.
//!
//! Only nodes that depend on a parameter carry gradients; constants and
//! data inputs are skipped entirely during the backward sweep.

use std::collections::HashMap;

use super::matrix::gemm;
use super::{Matrix, Param, ParamId};
use crate::error::{OtsError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulTn(Var, Var),
    SoftmaxCols(Var),
    LogSoftmaxCols(Var),
    ConcatRows(Var, Var),
    ScaleByParam(Var, Var),
    Scale(Var, f64),
    Add(Var, Var),
    Mul(Var, Var),
    SumRows(Var),
    SumCols(Var),
    MaxRows(Var, Vec<usize>),
    Log(Var),
    Relu(Var),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulTn(..) => "matmul_tn",
            Op::SoftmaxCols(_) => "softmax_cols",
            Op::LogSoftmaxCols(_) => "log_softmax_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::ScaleByParam(..) => "scale_by_param",
            Op::Scale(..) => "scale",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::SumRows(_) => "sum_rows",
            Op::SumCols(_) => "sum_cols",
            Op::MaxRows(..) => "max_rows",
            Op::Log(_) => "log",
            Op::Relu(_) => "relu",
            Op::Reshape(_) => "reshape",
        }
    }
}

enum Value<'a> {
    Owned(Matrix),
    Borrowed(&'a Matrix),
}

impl Value<'_> {
    fn get(&self) -> &Matrix {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

struct Node<'a> {
    op: Op,
    value: Value<'a>,
    requires_grad: bool,
}

/// Recorded forward computation. Borrowed inputs and parameters must
/// outlive the tape.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Parameter gradients produced by a backward sweep, keyed by [`ParamId`].
#[derive(Debug, Default, Clone)]
pub struct Grads {
    by_param: HashMap<ParamId, Matrix>,
    visit_order: Vec<usize>,
}

impl Grads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.by_param.get(&id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        self.by_param.get_mut(&id)
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Node indices visited by the most recent backward sweep, in visit order.
    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }

    /// Adds every stored gradient into the matching parameter's `grad`.
    pub fn accumulate_into<'p>(&self, params: impl IntoIterator<Item = &'p mut Param>) {
        for p in params {
            if let Some(g) = self.by_param.get(&p.id()) {
                p.grad_mut().axpy(1.0, g);
            }
        }
    }

    fn add(&mut self, id: ParamId, g: Matrix) {
        match self.by_param.get_mut(&id) {
            Some(existing) => existing.axpy(1.0, &g),
            None => {
                self.by_param.insert(id, g);
            }
        }
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite result from {}", op.name());
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.nodes[v.0].value.get()
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Op::Leaf, m, false)
    }

    /// Borrowed, non-differentiable input.
    pub fn input(&mut self, m: &'a Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Value::Borrowed(m),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, p: &'a Param) -> Var {
        self.nodes.push(Node {
            op: Op::Param(p.id()),
            value: Value::Borrowed(p.value()),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    /// `a^T b` without materializing the transpose.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.rows() != bm.rows() {
            return Err(OtsError::shape(
                "matmul_tn",
                format!(
                    "({}x{})^T times {}x{}",
                    am.rows(),
                    am.cols(),
                    bm.rows(),
                    bm.cols()
                ),
            ));
        }
        let mut out = Matrix::zeros(am.cols(), bm.cols());
        gemm(1.0, am, true, bm, false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMulTn(a, b), out, rg))
    }

    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).softmax_cols();
        let rg = self.rg(a);
        self.push(Op::SoftmaxCols(a), out, rg)
    }

    pub fn log_softmax_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).log_softmax_cols();
        let rg = self.rg(a);
        self.push(Op::LogSoftmaxCols(a), out, rg)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).vstack(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::ConcatRows(a, b), out, rg))
    }

    /// Elementwise `gamma * a` for a 1x1 `gamma` node.
    pub fn scale_by(&mut self, a: Var, gamma: Var) -> Result<Var> {
        let g = self.value(gamma);
        if g.shape() != (1, 1) {
            return Err(OtsError::shape(
                "scale_by_scalar_param",
                format!("gamma must be 1x1, got {}x{}", g.rows(), g.cols()),
            ));
        }
        let s = g.get(0, 0);
        let out = self.value(a).scale(s);
        let rg = self.rg(a) || self.rg(gamma);
        Ok(self.push(Op::ScaleByParam(a, gamma), out, rg))
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(Op::Scale(a, s), out, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    /// Sums across columns: `m x n -> m x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let out = Matrix::from_fn(m.rows(), 1, |r, _| m.row(r).iter().sum());
        let rg = self.rg(a);
        self.push(Op::SumRows(a), out, rg)
    }

    /// Sums down rows: `m x n -> 1 x n`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(1, m.cols());
        for r in 0..m.rows() {
            for (o, v) in out.as_mut_slice().iter_mut().zip(m.row(r)) {
                *o += v;
            }
        }
        let rg = self.rg(a);
        self.push(Op::SumCols(a), out, rg)
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let r = self.sum_rows(a);
        self.sum_cols(r)
    }

    /// Maximum across columns: `m x n -> m x 1`. Ties route the gradient
    /// to the first maximal column.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.cols() == 0 {
            return Err(OtsError::shape("max_rows", "zero columns"));
        }
        let mut arg = Vec::with_capacity(m.rows());
        let mut out = Matrix::zeros(m.rows(), 1);
        for r in 0..m.rows() {
            let row = m.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            arg.push(best);
            out.set(r, 0, row[best]);
        }
        let rg = self.rg(a);
        Ok(self.push(Op::MaxRows(a, arg), out, rg))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if let Some(v) = m.as_slice().iter().find(|v| **v <= 0.0) {
            return Err(OtsError::Usage(format!("log of non-positive entry {v}")));
        }
        let out = m.map(f64::ln);
        let rg = self.rg(a);
        Ok(self.push(Op::Log(a), out, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(Op::Relu(a), out, rg)
    }

    /// Row-major reinterpretation with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).reshape(rows, cols)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape(a), out, rg))
    }

    /// Consumes the tape and returns gradients of the scalar `loss`.
    pub fn backward(self, loss: Var) -> Result<Grads> {
        let mut grads = Grads::new();
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Consumes the tape, adding gradients of `loss` into `grads`.
    pub fn backward_into(self, loss: Var, grads: &mut Grads) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(OtsError::Usage(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        grads.visit_order.clear();
        let mut adj: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(Matrix::ones(1, 1));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            grads.visit_order.push(i);
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.add(*id, g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let slot = slot(&mut adj, *a, av.shape());
                        gemm(1.0, &g, false, bv, true, 1.0, slot);
                    }
                    if self.rg(*b) {
                        let slot = slot(&mut adj, *b, bv.shape());
                        gemm(1.0, av, true, &g, false, 1.0, slot);
                    }
                }
                Op::MatMulTn(a, b) => {
                    // c = a^T b: da = b g^T, db = a g
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let slot = slot(&mut adj, *a, av.shape());
                        gemm(1.0, bv, false, &g, true, 1.0, slot);
                    }
                    if self.rg(*b) {
                        let slot = slot(&mut adj, *b, bv.shape());
                        gemm(1.0, av, false, &g, false, 1.0, slot);
                    }
                }
                Op::SoftmaxCols(a) => {
                    let y = node.value.get();
                    let (rows, cols) = y.shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    for c in 0..cols {
                        let dot: f64 = (0..rows).map(|r| y.get(r, c) * g.get(r, c)).sum();
                        for r in 0..rows {
                            dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut adj, *a, dx);
                }
                Op::LogSoftmaxCols(a) => {
                    let y = node.value.get();
                    let (rows, cols) = y.shape();
                    let mut dx = g.clone();
                    for c in 0..cols {
                        let total: f64 = (0..rows).map(|r| g.get(r, c)).sum();
                        for r in 0..rows {
                            dx.set(r, c, g.get(r, c) - y.get(r, c).exp() * total);
                        }
                    }
                    accumulate(&mut adj, *a, dx);
                }
                Op::ConcatRows(a, b) => {
                    let top = self.value(*a).rows();
                    let (ga, gb) = g.split_rows(top);
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, ga);
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::ScaleByParam(a, gamma) => {
                    let s = self.value(*gamma).get(0, 0);
                    if self.rg(*gamma) {
                        let dg: f64 = self
                            .value(*a)
                            .as_slice()
                            .iter()
                            .zip(g.as_slice())
                            .map(|(x, y)| x * y)
                            .sum();
                        accumulate(&mut adj, *gamma, Matrix::filled(1, 1, dg));
                    }
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g.scale(s));
                    }
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::Add(a, b) => {
                    if self.rg(*a) && self.rg(*b) {
                        accumulate(&mut adj, *a, g.clone());
                        accumulate(&mut adj, *b, g);
                    } else if self.rg(*a) {
                        accumulate(&mut adj, *a, g);
                    } else {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let d = g.zip_map(self.value(*b), |x, y| x * y)?;
                        accumulate(&mut adj, *a, d);
                    }
                    if self.rg(*b) {
                        let d = g.zip_map(self.value(*a), |x, y| x * y)?;
                        accumulate(&mut adj, *b, d);
                    }
                }
                Op::SumRows(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let d = Matrix::from_fn(rows, cols, |r, _| g.get(r, 0));
                    accumulate(&mut adj, *a, d);
                }
                Op::SumCols(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let d = Matrix::from_fn(rows, cols, |_, c| g.get(0, c));
                    accumulate(&mut adj, *a, d);
                }
                Op::MaxRows(a, arg) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for (r, &c) in arg.iter().enumerate() {
                        d.set(r, c, g.get(r, 0));
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::Log(a) => {
                    let d = g.zip_map(self.value(*a), |x, y| x / y)?;
                    accumulate(&mut adj, *a, d);
                }
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 })?;
                    accumulate(&mut adj, *a, d);
                }
                Op::Reshape(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    accumulate(&mut adj, *a, g.reshape(rows, cols)?);
                }
            }
        }
        Ok(())
    }
}

fn slot(adj: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    adj[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.axpy(1.0, &g),
        empty => *empty = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_gradient_is_outer_product() {
        let w = Param::new(Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let x = Matrix::column_vector(&[0.5, -1.0, 2.0]);
        let mut tape = Tape::new();
        let wv = tape.param(&w);
        let xv = tape.input(&x);
        let y = tape.matmul(wv, xv).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        let expected = Matrix::from_rows(&[&[0.5, -1.0, 2.0], &[0.5, -1.0, 2.0]]);
        assert_eq!(grads.get(w.id()).unwrap(), &expected);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let w = Param::new(Matrix::ones(2, 2));
        let mut tape = Tape::new();
        let v = tape.param(&w);
        let err = tape.backward(v).unwrap_err();
        assert!(matches!(err, OtsError::Usage(_)));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut w = Param::new(Matrix::from_rows(&[&[1.0, -2.0]]));
        let x = Matrix::column_vector(&[3.0, 4.0]);
        for _ in 0..2 {
            let grads = {
                let mut tape = Tape::new();
                let wv = tape.param(&w);
                let xv = tape.input(&x);
                let y = tape.matmul(wv, xv).unwrap();
                tape.backward(y).unwrap()
            };
            grads.accumulate_into([&mut w]);
        }
        assert_eq!(w.grad(), &Matrix::from_rows(&[&[6.0, 8.0]]));
        w.zero_grad();
        assert_eq!(w.grad(), &Matrix::zeros(1, 2));
    }

    #[test]
    fn backward_visits_nodes_in_reverse_order() {
        let w = Param::new(Matrix::ones(2, 2));
        let mut tape = Tape::new();
        let a = tape.param(&w);
        let b = tape.softmax_cols(a);
        let c = tape.relu(b);
        let loss = tape.sum(c);
        let grads = tape.backward(loss).unwrap();
        let order = grads.visit_order();
        assert!(order.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(order.first(), Some(&loss.index()));
        assert_eq!(order.last(), Some(&a.index()));
    }

    #[test]
    fn gamma_edge_values() {
        let a = Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]);
        for (g, expect) in [(0.0, Matrix::zeros(2, 2)), (1.0, a.clone())] {
            let gamma = Param::new(Matrix::filled(1, 1, g));
            let mut tape = Tape::new();
            let av = tape.input(&a);
            let gv = tape.param(&gamma);
            let out = tape.scale_by(av, gv).unwrap();
            assert_eq!(tape.value(out), &expect);
        }
    }

    #[test]
    fn scale_by_rejects_non_scalar_gamma() {
        let a = Matrix::ones(2, 2);
        let gamma = Param::new(Matrix::ones(1, 2));
        let mut tape = Tape::new();
        let av = tape.input(&a);
        let gv = tape.param(&gamma);
        assert!(matches!(
            tape.scale_by(av, gv),
            Err(OtsError::Shape { .. })
        ));
    }

    #[test]
    fn concat_gradient_of_sum_is_all_ones() {
        let a = Param::new(Matrix::from_rows(&[&[1.0, 2.0]]));
        let b = Param::new(Matrix::from_rows(&[&[3.0, 4.0]]));
        let mut tape = Tape::new();
        let av = tape.param(&a);
        let bv = tape.param(&b);
        let c = tape.concat_rows(av, bv).unwrap();
        assert_eq!(
            tape.value(c),
            &Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])
        );
        let loss = tape.sum(c);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a.id()).unwrap(), &Matrix::ones(1, 2));
    }

    #[test]
    fn concat_column_mismatch_is_shape_error() {
        let a = Matrix::ones(1, 2);
        let b = Matrix::ones(1, 3);
        let mut tape = Tape::new();
        let av = tape.input(&a);
        let bv = tape.input(&b);
        assert!(matches!(
            tape.concat_rows(av, bv),
            Err(OtsError::Shape { .. })
        ));
    }

    #[test]
    fn constants_receive_no_gradient_work() {
        let x = Matrix::ones(3, 3);
        let mut tape = Tape::new();
        let xv = tape.input(&x);
        let y = tape.softmax_cols(xv);
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.is_empty());
        assert!(grads.visit_order().is_empty());
    }
}
