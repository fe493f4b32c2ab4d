//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! Every operation appends a node holding its output value. `backward`
//! walks the nodes in exact reverse order of recording and accumulates
//! adjoints additively, so a value consumed by several operations (a
//! weight reused at every timestep of a recurrent unroll) receives the
//! sum of all contributions.
//!
//! Parameters enter the tape through [`Tape::param`] and are keyed by
//! [`ParamId`]. The gradient reported for a parameter is the gradient of
//! the loss with respect to the value that was placed on the tape. For a
//! masked weight this is the dense gradient, including positions the mask
//! currently zeroes out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matrix::{gemm_nn, gemm_tn, Matrix};
use crate::error::{MastError, Result};

/// Stable identity of a trainable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMulT(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    OneMinus(NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Elu(NodeId),
    Abs(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    GatherCols(NodeId, Vec<usize>),
    Reshape(NodeId),
    BatchedMix { q: NodeId, w: NodeId, n: usize, e: usize },
    Sum(NodeId),
    WeightedSse {
        pred: NodeId,
        target: Vec<f64>,
        weight: Vec<f64>,
        denom: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of a forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    by_id: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.by_id.get(&id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        self.by_id.get_mut(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Matrix) {
        self.by_id.insert(id, grad);
    }

    /// Adds `grad` into the entry for `id`, creating it when absent.
    pub fn accumulate(&mut self, id: ParamId, grad: Matrix) {
        match self.by_id.get_mut(&id) {
            Some(g) => g.add_assign(&grad),
            None => {
                self.by_id.insert(id, grad);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.by_id.iter().map(|(k, v)| (*k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Matrix)> {
        self.by_id.iter_mut().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.by_id.values().all(Matrix::is_finite)
    }

    pub fn global_norm(&self) -> f64 {
        self.by_id.values().map(Matrix::sum_squares).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            self.by_id.values_mut().for_each(|g| g.scale_in_place(s));
        }
        norm
    }
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId, value: &Matrix) -> NodeId {
        self.push(value.clone(), Op::Param(id), true)
    }

    /// `x · wᵀ` with `x: B x I`, `w: O x I`.
    pub fn matmul_t(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let out = self.value(x).matmul_t(self.value(w))?;
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::MatMulT(x, w), ng))
    }

    /// Adds the `1 x O` row `b` to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs.0 != 1 || bs.1 != xs.1 {
            return Err(MastError::shapes("add_bias", xs, bs));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).as_slice().to_vec();
        for r in 0..xs.0 {
            for (v, bv) in out.row_mut(r).iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::AddBias(x, b), ng))
    }

    fn zip_with(
        &mut self,
        a: NodeId,
        b: NodeId,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(MastError::shapes(context, sa, sb));
        }
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Matrix::from_vec(sa.0, sa.1, data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let out = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(out, op, ng)
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn elu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, elu, Op::Elu(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Horizontal concatenation; all parts share the row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(MastError::shapes("concat_cols", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let dst = out.row_mut(r);
            let mut off = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Vertical concatenation; all parts share the column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(MastError::shapes("concat_rows", (rows, cols), s));
            }
            rows += s.0;
            data.extend_from_slice(self.value(p).as_slice());
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(x);
        if start + len > cols {
            return Err(MastError::shapes("slice_cols", (rows, cols), (start, len)));
        }
        let mut out = Matrix::zeros(rows, len);
        for r in 0..rows {
            out.row_mut(r)
                .copy_from_slice(&self.value(x).row(r)[start..start + len]);
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::SliceCols(x, start), ng))
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(x);
        if start + len > rows {
            return Err(MastError::shapes("slice_rows", (rows, cols), (start, len)));
        }
        let data = self.value(x).as_slice()[start * cols..(start + len) * cols].to_vec();
        let out = Matrix::from_vec(len, cols, data)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::SliceRows(x, start), ng))
    }

    /// Picks `x[b, idx[b]]` for every row, giving a `B x 1` column.
    pub fn gather_cols(&mut self, x: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let (rows, cols) = self.shape(x);
        if idx.len() != rows || idx.iter().any(|&i| i >= cols) {
            return Err(MastError::shapes("gather_cols", (rows, cols), (idx.len(), 1)));
        }
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| self.value(x).get(r, c))
            .collect();
        let out = Matrix::from_vec(rows, 1, data)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::GatherCols(x, idx), ng))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if s.0 * s.1 != rows * cols {
            return Err(MastError::shapes("reshape", s, (rows, cols)));
        }
        let out = self.value(x).clone().reshaped(rows, cols);
        let ng = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Per-row vector–matrix product with row-specific weights:
    /// `out[b, j] = Σ_i q[b, i] · w[b, i·e + j]` for `q: B x n`, `w: B x (n·e)`.
    pub fn batched_mix(&mut self, q: NodeId, w: NodeId, n: usize, e: usize) -> Result<NodeId> {
        let (qs, ws) = (self.shape(q), self.shape(w));
        if qs.1 != n || ws.1 != n * e || qs.0 != ws.0 {
            return Err(MastError::shapes("batched_mix", qs, ws));
        }
        let rows = qs.0;
        let mut out = Matrix::zeros(rows, e);
        {
            let (qv, wv) = (self.value(q), self.value(w));
            for b in 0..rows {
                let (qr, wr) = (qv.row(b), wv.row(b));
                let or = out.row_mut(b);
                for (i, &qi) in qr.iter().enumerate() {
                    for (o, &wij) in or.iter_mut().zip(&wr[i * e..(i + 1) * e]) {
                        *o += qi * wij;
                    }
                }
            }
        }
        let ng = self.needs(q) || self.needs(w);
        Ok(self.push(out, Op::BatchedMix { q, w, n, e }, ng))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).sum();
        let ng = self.needs(x);
        self.push(Matrix::filled(1, 1, s), Op::Sum(x), ng)
    }

    /// `Σ_k weight_k · (target_k − pred_k)² / denom` as a `1 x 1` node.
    /// Targets are constants: no gradient flows into them.
    pub fn weighted_sse(
        &mut self,
        pred: NodeId,
        target: Vec<f64>,
        weight: Vec<f64>,
        denom: f64,
    ) -> Result<NodeId> {
        let n = self.value(pred).len();
        if target.len() != n || weight.len() != n {
            return Err(MastError::DimensionMismatch {
                context: "weighted_sse",
                left: format!("{n} predictions"),
                right: format!("{} targets, {} weights", target.len(), weight.len()),
            });
        }
        if denom <= 0.0 {
            return Err(MastError::InvalidArgument(
                "weighted_sse denominator must be positive".into(),
            ));
        }
        let loss = self
            .value(pred)
            .as_slice()
            .iter()
            .zip(&target)
            .zip(&weight)
            .map(|((&p, &t), &w)| w * (t - p) * (t - p))
            .sum::<f64>()
            / denom;
        let ng = self.needs(pred);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::WeightedSse {
                pred,
                target,
                weight,
                denom,
            },
            ng,
        ))
    }

    /// Reverse sweep from the scalar node `loss`, seeded with `seed`.
    pub fn backward(&self, loss: NodeId, seed: f64) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(MastError::TapeIncomplete(format!(
                "loss node {} not recorded (tape has {} nodes)",
                loss.0,
                self.nodes.len()
            )));
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(MastError::TapeIncomplete(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads = Gradients::new();
        let mut adj: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(Matrix::filled(1, 1, seed));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.accumulate(*id, g),
                Op::MatMulT(x, w) => {
                    if self.needs(*x) {
                        let wv = self.value(*w);
                        let mut dx = Matrix::zeros(g.rows(), wv.cols());
                        gemm_nn(&g, wv, &mut dx, 0.0);
                        self.acc(&mut adj, *x, dx);
                    }
                    if self.needs(*w) {
                        let xv = self.value(*x);
                        let mut dw = Matrix::zeros(g.cols(), xv.cols());
                        gemm_tn(&g, xv, &mut dw, 0.0);
                        self.acc(&mut adj, *w, dw);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.needs(*b) {
                        let mut db = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, v) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                        self.acc(&mut adj, *b, db);
                    }
                    self.acc(&mut adj, *x, g);
                }
                Op::Add(a, b) => {
                    self.acc(&mut adj, *a, g.clone());
                    self.acc(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut adj, *a, g.clone());
                    self.acc(&mut adj, *b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let da = hadamard(&g, self.value(*b));
                        self.acc(&mut adj, *a, da);
                    }
                    if self.needs(*b) {
                        let db = hadamard(&g, self.value(*a));
                        self.acc(&mut adj, *b, db);
                    }
                }
                Op::OneMinus(a) => self.acc(&mut adj, *a, g.map(|v| -v)),
                Op::Scale(a, c) => {
                    let c = *c;
                    self.acc(&mut adj, *a, g.map(|v| c * v));
                }
                Op::Sigmoid(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    self.acc(&mut adj, *a, d);
                }
                Op::Tanh(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * (1.0 - y * y));
                    self.acc(&mut adj, *a, d);
                }
                Op::Relu(a) => {
                    let d = zip_map(&g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    self.acc(&mut adj, *a, d);
                }
                Op::Elu(a) => {
                    let x = self.value(*a).as_slice();
                    let y = node.value.as_slice();
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(&gv, (&xv, &yv))| if xv > 0.0 { gv } else { gv * (yv + 1.0) })
                        .collect();
                    let d = Matrix::from_vec(g.rows(), g.cols(), data)?;
                    self.acc(&mut adj, *a, d);
                }
                Op::Abs(a) => {
                    let d = zip_map(&g, self.value(*a), |gv, x| {
                        if x > 0.0 {
                            gv
                        } else if x < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    });
                    self.acc(&mut adj, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        if self.needs(p) {
                            let mut d = Matrix::zeros(g.rows(), pc);
                            for r in 0..g.rows() {
                                d.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                            }
                            self.acc(&mut adj, p, d);
                        }
                        off += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (pr, pc) = self.shape(p);
                        if self.needs(p) {
                            let data = g.as_slice()[off * pc..(off + pr) * pc].to_vec();
                            self.acc(&mut adj, p, Matrix::from_vec(pr, pc, data)?);
                        }
                        off += pr;
                    }
                }
                Op::SliceCols(x, start) => {
                    let (rows, cols) = self.shape(*x);
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    self.acc(&mut adj, *x, d);
                }
                Op::SliceRows(x, start) => {
                    if self.needs(*x) {
                        let (rows, cols) = self.shape(*x);
                        let m = adj[x.0].get_or_insert_with(|| Matrix::zeros(rows, cols));
                        let block = &mut m.as_mut_slice()[*start * cols..*start * cols + g.len()];
                        for (d, v) in block.iter_mut().zip(g.as_slice()) {
                            *d += v;
                        }
                    }
                }
                Op::GatherCols(x, idx) => {
                    let (rows, cols) = self.shape(*x);
                    let mut d = Matrix::zeros(rows, cols);
                    for (r, &c) in idx.iter().enumerate() {
                        d.set(r, c, g.get(r, 0));
                    }
                    self.acc(&mut adj, *x, d);
                }
                Op::Reshape(x) => {
                    let (rows, cols) = self.shape(*x);
                    self.acc(&mut adj, *x, g.reshaped(rows, cols));
                }
                Op::BatchedMix { q, w, n, e } => {
                    let (n, e) = (*n, *e);
                    let rows = g.rows();
                    if self.needs(*q) {
                        let wv = self.value(*w);
                        let mut dq = Matrix::zeros(rows, n);
                        for b in 0..rows {
                            let (gr, wr) = (g.row(b), wv.row(b));
                            for i in 0..n {
                                let s: f64 =
                                    gr.iter().zip(&wr[i * e..(i + 1) * e]).map(|(a, c)| a * c).sum();
                                dq.set(b, i, s);
                            }
                        }
                        self.acc(&mut adj, *q, dq);
                    }
                    if self.needs(*w) {
                        let qv = self.value(*q);
                        let mut dw = Matrix::zeros(rows, n * e);
                        for b in 0..rows {
                            let gr = g.row(b).to_vec();
                            let qr = qv.row(b);
                            let dr = dw.row_mut(b);
                            for i in 0..n {
                                for j in 0..e {
                                    dr[i * e + j] = qr[i] * gr[j];
                                }
                            }
                        }
                        self.acc(&mut adj, *w, dw);
                    }
                }
                Op::Sum(x) => {
                    let (rows, cols) = self.shape(*x);
                    self.acc(&mut adj, *x, Matrix::filled(rows, cols, g.get(0, 0)));
                }
                Op::WeightedSse {
                    pred,
                    target,
                    weight,
                    denom,
                } => {
                    let (rows, cols) = self.shape(*pred);
                    let s = g.get(0, 0);
                    let data = self
                        .value(*pred)
                        .as_slice()
                        .iter()
                        .zip(target)
                        .zip(weight)
                        .map(|((&p, &t), &w)| -2.0 * w * (t - p) / denom * s)
                        .collect();
                    self.acc(&mut adj, *pred, Matrix::from_vec(rows, cols, data)?);
                }
            }
        }
        Ok(grads)
    }

    fn acc(&self, adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
        if !self.needs(id) {
            return;
        }
        match &mut adj[id.0] {
            Some(m) => m.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("zip_map shapes agree")
}
