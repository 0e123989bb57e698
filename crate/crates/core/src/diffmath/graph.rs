//! Reverse-mode differentiation over a recorded graph of matrix operations.
//!
//! Nodes are appended in construction order, which is also a valid
//! topological order: every op only refers to nodes created before it.
//! [`Graph::forward`] (re)computes every node from the leaf values, so leaves
//! can be perturbed and the graph re-evaluated without rebuilding it.

use std::sync::Arc;

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    /// Leaf holding a constant or a trainable parameter.
    Leaf,
    MatMul(NodeId, NodeId),
    /// `n x c` plus a `1 x c` row added to every row.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Relu(NodeId),
    Square(NodeId),
    /// Columnwise max over rows, `n x c -> 1 x c`.
    MaxPoolRows(NodeId),
    /// Tiles a `1 x c` row `n` times.
    RepeatRows(NodeId, usize),
    ConcatCols(NodeId, NodeId),
    /// `n x f -> n x n` Euclidean distances between rows.
    PairwiseDistance(NodeId),
    /// Row-wise log-softmax.
    LogSoftmax(NodeId),
    /// Sum of all entries, `-> 1 x 1`.
    Sum(NodeId),
    /// Summed per-entry terms of a matrix, `-> 1 x 1`.
    EntryTerms(NodeId, Arc<EntryTerms>),
}

/// One term applied to a matrix entry `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EntryTerm {
    /// `weight * d`.
    Linear(f64),
    /// `weight * max(0, margin - d)`; inactive at `d == margin`.
    Hinge { weight: f64, margin: f64 },
}

impl EntryTerm {
    fn value(self, d: f64) -> f64 {
        match self {
            EntryTerm::Linear(w) => w * d,
            EntryTerm::Hinge { weight, margin } => weight * (margin - d).max(0.0),
        }
    }

    fn slope(self, d: f64) -> f64 {
        match self {
            EntryTerm::Linear(w) => w,
            EntryTerm::Hinge { weight, margin } if margin - d > 0.0 => -weight,
            EntryTerm::Hinge { .. } => 0.0,
        }
    }
}

/// Row-major table choosing one of a few terms for every entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EntryTerms {
    pub rows: usize,
    pub cols: usize,
    /// Index into `terms`, one per entry.
    pub code: Vec<u8>,
    pub terms: Vec<EntryTerm>,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Square(..) => "square",
            Op::MaxPoolRows(..) => "max_pool_rows",
            Op::RepeatRows(..) => "repeat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::PairwiseDistance(..) => "pairwise_distance",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Sum(..) => "sum",
            Op::EntryTerms(..) => "entry_terms",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Option<Matrix>,
    /// Argmax row per column for `MaxPoolRows`.
    argmax: Vec<usize>,
    name: Option<String>,
    trainable: bool,
}

/// A single-owner computation graph.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
    root: Option<NodeId>,
    grads: Vec<Option<Matrix>>,
    /// Nodes `0..valid` hold values consistent with the current leaves.
    valid: usize,
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

    fn push(&mut self, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value: None,
            argmax: Vec::new(),
            name: None,
            trainable: false,
        });
        id
    }

    /// Constant leaf; receives no gradient accumulator.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        let id = self.push(Op::Leaf);
        self.nodes[id.0].value = Some(value);
        id
    }

    /// Trainable leaf. Parameters are reported in declaration order.
    pub fn param(&mut self, name: impl Into<String>, value: Matrix) -> NodeId {
        let id = self.input(value);
        let node = &mut self.nodes[id.0];
        node.name = Some(name.into());
        node.trainable = true;
        self.params.push(id);
        id
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn name(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.0].name.as_deref()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn value(&self, id: NodeId) -> Option<&Matrix> {
        self.nodes[id.0].value.as_ref()
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Replaces the value of a leaf. Downstream values become stale until the
    /// next [`Graph::forward`].
    pub fn set_value(&mut self, id: NodeId, value: Matrix) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::InvalidArgument(format!(
                "node {} is not a leaf",
                id.0
            )));
        }
        node.value = Some(value);
        self.valid = self.valid.min(id.0);
        Ok(())
    }

    pub(crate) fn leaf_value_mut(&mut self, id: NodeId) -> &mut Matrix {
        debug_assert!(matches!(self.nodes[id.0].op, Op::Leaf));
        self.valid = self.valid.min(id.0);
        self.nodes[id.0]
            .value
            .as_mut()
            .expect("leaf values are set at construction")
    }

    pub fn set_root(&mut self, id: NodeId) {
        self.root = Some(id);
    }

    /// The explicit root, or the most recently added node.
    pub fn root(&self) -> Option<NodeId> {
        self.root
            .or_else(|| self.nodes.len().checked_sub(1).map(NodeId))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::AddScalar(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn max_pool_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MaxPoolRows(a))
    }

    pub fn repeat_rows(&mut self, a: NodeId, n: usize) -> NodeId {
        self.push(Op::RepeatRows(a, n))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::ConcatCols(a, b))
    }

    pub fn pairwise_distance(&mut self, a: NodeId) -> NodeId {
        self.push(Op::PairwiseDistance(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSoftmax(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    /// `sum_e terms[code[e]](a[e])` over all entries of `a`.
    pub fn entry_terms(&mut self, a: NodeId, terms: Arc<EntryTerms>) -> NodeId {
        self.push(Op::EntryTerms(a, terms))
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_bias(xw, b)
    }

    /// Evaluates every stale node and returns the root value.
    ///
    /// Nodes appended after a previous call are evaluated without recomputing
    /// the ones before them; changing a leaf invalidates everything after it.
    pub fn forward(&mut self) -> Result<&Matrix> {
        let root = self
            .root()
            .ok_or_else(|| Error::InvalidArgument("empty graph".into()))?;
        for idx in self.valid..self.nodes.len() {
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let v = self.nodes[idx].value.as_ref().ok_or(Error::NotEvaluated)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        node: idx,
                        op: "leaf",
                    });
                }
                continue;
            }
            let (value, argmax) = match self.eval(idx) {
                Ok(v) => v,
                Err(e) => {
                    self.valid = idx;
                    return Err(e);
                }
            };
            let node = &mut self.nodes[idx];
            node.value = Some(value);
            node.argmax = argmax;
        }
        self.valid = self.nodes.len();
        Ok(self.nodes[root.0].value.as_ref().expect("evaluated"))
    }

    fn val(&self, id: NodeId) -> &Matrix {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("inputs precede their consumers")
    }

    fn eval(&self, idx: usize) -> Result<(Matrix, Vec<usize>)> {
        let op = &self.nodes[idx].op;
        let name = op.name();
        let mismatch = |detail: String| Error::Shape {
            node: idx,
            op: name,
            detail,
        };
        let same_shape = |a: &Matrix, b: &Matrix| -> Result<()> {
            if a.shape() != b.shape() {
                return Err(mismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            Ok(())
        };
        let out = match *op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(a), self.val(b));
                if a.cols() != b.rows() {
                    return Err(mismatch(format!(
                        "{}x{} times {}x{}",
                        a.rows(),
                        a.cols(),
                        b.rows(),
                        b.cols()
                    )));
                }
                Matrix::gemm(a, false, b, false)
            }
            Op::AddBias(a, b) => {
                let (a, b) = (self.val(a), self.val(b));
                if b.rows() != 1 || b.cols() != a.cols() {
                    return Err(mismatch(format!(
                        "bias {:?} for input {:?}",
                        b.shape(),
                        a.shape()
                    )));
                }
                let mut out = a.clone();
                for r in 0..out.rows() {
                    for (o, bb) in out.row_mut(r).iter_mut().zip(b.data()) {
                        *o += bb;
                    }
                }
                out
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (x, y) = (self.val(a), self.val(b));
                same_shape(x, y)?;
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add(..) => |p, q| p + q,
                    Op::Sub(..) => |p, q| p - q,
                    _ => |p, q| p * q,
                };
                let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
                Matrix::from_vec(x.rows(), x.cols(), data)?
            }
            Op::Scale(a, s) => self.val(a).map(|v| v * s),
            Op::AddScalar(a, s) => self.val(a).map(|v| v + s),
            Op::Relu(a) => self.val(a).map(|v| if v > 0.0 { v } else { 0.0 }),
            Op::Square(a) => self.val(a).map(|v| v * v),
            Op::MaxPoolRows(a) => {
                let a = self.val(a);
                if a.rows() == 0 {
                    return Err(mismatch("max-pool over zero rows".into()));
                }
                let mut out = Matrix::zeros(1, a.cols());
                let mut arg = vec![0usize; a.cols()];
                out.data_mut().copy_from_slice(a.row(0));
                for r in 1..a.rows() {
                    for (c, &v) in a.row(r).iter().enumerate() {
                        // strict comparison keeps the lowest index on ties
                        if v > out.data()[c] {
                            out.data_mut()[c] = v;
                            arg[c] = r;
                        }
                    }
                }
                return Ok((out, arg));
            }
            Op::RepeatRows(a, n) => {
                let a = self.val(a);
                if a.rows() != 1 {
                    return Err(mismatch(format!("expected a row, got {:?}", a.shape())));
                }
                let mut data = Vec::with_capacity(n * a.cols());
                for _ in 0..n {
                    data.extend_from_slice(a.data());
                }
                Matrix::from_vec(n, a.cols(), data)?
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (self.val(a), self.val(b));
                if a.rows() != b.rows() {
                    return Err(mismatch(format!("{:?} beside {:?}", a.shape(), b.shape())));
                }
                let mut data = Vec::with_capacity(a.len() + b.len());
                for r in 0..a.rows() {
                    data.extend_from_slice(a.row(r));
                    data.extend_from_slice(b.row(r));
                }
                Matrix::from_vec(a.rows(), a.cols() + b.cols(), data)?
            }
            Op::PairwiseDistance(a) => pairwise_distance(self.val(a)),
            Op::LogSoftmax(a) => {
                let a = self.val(a);
                let mut out = a.clone();
                for r in 0..out.rows() {
                    let row = out.row_mut(r);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    for v in row.iter_mut() {
                        *v -= lse;
                    }
                }
                out
            }
            Op::Sum(a) => Matrix::scalar(self.val(a).sum()),
            Op::EntryTerms(a, ref t) => {
                let a = self.val(a);
                if a.shape() != (t.rows, t.cols) || t.code.len() != t.rows * t.cols {
                    return Err(mismatch(format!("{:?} vs a {}x{} table", a.shape(), t.rows, t.cols)));
                }
                if let Some(&c) = t.code.iter().find(|&&c| c as usize >= t.terms.len()) {
                    return Err(mismatch(format!("code {c} with {} terms", t.terms.len())));
                }
                let total = a.data().iter().zip(&t.code).map(|(&d, &c)| t.terms[c as usize].value(d)).sum();
                Matrix::scalar(total)
            }
        };
        Ok((out, Vec::new()))
    }

    pub(crate) fn restore_grad(&mut self, id: NodeId, g: Matrix) {
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        self.grads[id.0] = Some(g);
    }

    /// Clears accumulated parameter gradients.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    /// Back-propagates from the scalar root, adding into the parameter
    /// gradient accumulators.
    pub fn backward(&mut self) -> Result<()> {
        let root = self.root().ok_or(Error::NotEvaluated)?;
        if self.valid <= root.0 {
            return Err(Error::NotEvaluated);
        }
        let rv = self.val(root);
        if rv.shape() != (1, 1) {
            return Err(Error::NonScalarRoot {
                rows: rv.rows(),
                cols: rv.cols(),
            });
        }
        let mut tmp: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        tmp[root.0] = Some(Matrix::scalar(1.0));
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = tmp[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {
                    if node.trainable {
                        match &mut self.grads[idx] {
                            Some(acc) => acc.add_assign(&g),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = Matrix::gemm(&g, false, self.val(b), true);
                    let gb = Matrix::gemm(self.val(a), true, &g, false);
                    accumulate(&mut tmp, a, ga);
                    accumulate(&mut tmp, b, gb);
                }
                Op::AddBias(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    accumulate(&mut tmp, b, gb);
                    accumulate(&mut tmp, a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut tmp, b, g.clone());
                    accumulate(&mut tmp, a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut tmp, b, g.map(|v| -v));
                    accumulate(&mut tmp, a, g);
                }
                Op::Mul(a, b) => {
                    let ga = hadamard(&g, self.val(b));
                    let gb = hadamard(&g, self.val(a));
                    accumulate(&mut tmp, a, ga);
                    accumulate(&mut tmp, b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut tmp, a, g.map(|v| v * s)),
                Op::AddScalar(a, _) => accumulate(&mut tmp, a, g),
                Op::Relu(a) => {
                    let x = self.val(a);
                    let mut ga = g;
                    for (gv, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut tmp, a, ga);
                }
                Op::Square(a) => {
                    let x = self.val(a);
                    let mut ga = g;
                    for (gv, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        *gv *= 2.0 * xv;
                    }
                    accumulate(&mut tmp, a, ga);
                }
                Op::MaxPoolRows(a) => {
                    let (rows, cols) = self.val(a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for (c, &r) in node.argmax.iter().enumerate() {
                        ga.set(r, c, g.get(0, c));
                    }
                    accumulate(&mut tmp, a, ga);
                }
                Op::RepeatRows(a, _) => {
                    let mut ga = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, v) in ga.data_mut().iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    accumulate(&mut tmp, a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.val(a).cols();
                    let cb = self.val(b).cols();
                    let ga = Matrix::from_fn(g.rows(), ca, |r, c| g.get(r, c));
                    let gb = Matrix::from_fn(g.rows(), cb, |r, c| g.get(r, ca + c));
                    accumulate(&mut tmp, a, ga);
                    accumulate(&mut tmp, b, gb);
                }
                Op::PairwiseDistance(a) => {
                    let x = self.val(a);
                    let d = node.value.as_ref().expect("evaluated");
                    let n = d.rows();
                    // W_ij = (g_ij + g_ji) / d_ij, zero where d_ij = 0
                    let mut w = Matrix::zeros(n, n);
                    let mut rowsum = vec![0.0; n];
                    for i in 0..n {
                        for j in 0..n {
                            let dij = d.get(i, j);
                            if dij > 0.0 {
                                let v = (g.get(i, j) + g.get(j, i)) / dij;
                                w.set(i, j, v);
                                rowsum[i] += v;
                            }
                        }
                    }
                    let mut ga = Matrix::gemm(&w, false, x, false);
                    for i in 0..n {
                        let s = rowsum[i];
                        for (gv, &xv) in ga.row_mut(i).iter_mut().zip(x.row(i)) {
                            *gv = s * xv - *gv;
                        }
                    }
                    accumulate(&mut tmp, a, ga);
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.as_ref().expect("evaluated");
                    let mut ga = g;
                    for r in 0..ga.rows() {
                        let total: f64 = ga.row(r).iter().sum();
                        for (gv, &yv) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *gv -= yv.exp() * total;
                        }
                    }
                    accumulate(&mut tmp, a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.val(a).shape();
                    accumulate(&mut tmp, a, Matrix::filled(rows, cols, g.get(0, 0)));
                }
                Op::EntryTerms(a, ref t) => {
                    let x = self.val(a);
                    let g0 = g.get(0, 0);
                    let data = x.data().iter().zip(&t.code).map(|(&d, &c)| g0 * t.terms[c as usize].slope(d)).collect();
                    let ga = Matrix::from_vec(x.rows(), x.cols(), data).expect("same shape");
                    accumulate(&mut tmp, a, ga);
                }
            }
        }
        Ok(())
    }

    /// First node (in evaluation order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            n.value
                .as_ref()
                .filter(|v| !v.is_finite())
                .map(|_| (i, n.op.name()))
        })
    }

    /// Which side of every nondifferentiable point the current values sit on:
    /// ReLU and hinge activity, max-pool winners, and zero distances.
    /// Values of every pairwise-distance node, in graph order.
    pub(crate) fn distance_values(&self) -> Vec<Matrix> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::PairwiseDistance(_)))
            .filter_map(|n| n.value.clone())
            .collect()
    }

    pub(crate) fn kink_signature(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) => sig.extend(self.val(a).data().iter().map(|&v| (v > 0.0) as u64)),
                Op::MaxPoolRows(_) => sig.extend(node.argmax.iter().map(|&r| r as u64)),
                Op::EntryTerms(a, ref t) => {
                    let x = self.val(a);
                    sig.extend(x.data().iter().zip(&t.code).map(|(&d, &c)| match t.terms[c as usize] {
                        EntryTerm::Hinge { margin, .. } => (margin - d > 0.0) as u64,
                        EntryTerm::Linear(_) => 0,
                    }));
                }
                Op::PairwiseDistance(_) => {
                    if let Some(d) = &node.value {
                        sig.extend(d.data().iter().map(|&v| (v > 0.0) as u64));
                    }
                }
                _ => {}
            }
        }
        sig
    }
}

fn accumulate(tmp: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut tmp[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Row distances via `|a|^2 + |b|^2 - 2 a.b`, negatives clamped before the
/// square root and the diagonal pinned to zero.
pub fn pairwise_distance(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::gemm(x, false, x, true);
    let sq: Vec<f64> = (0..n).map(|i| d.get(i, i)).collect();
    for i in 0..n {
        let row = d.row_mut(i);
        for j in 0..n {
            row[j] = if i == j {
                0.0
            } else {
                (sq[i] + sq[j] - 2.0 * row[j]).max(0.0).sqrt()
            };
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows)
    }

    #[test]
    fn identity_affine() {
        let mut g = Graph::new();
        let x = g.input(m(&[&[1.0, 2.0]]));
        let w = g.input(Matrix::identity(2));
        let b = g.input(Matrix::zeros(1, 2));
        g.affine(x, w, b);
        assert_eq!(g.forward().unwrap(), &m(&[&[1.0, 2.0]]));
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.input(m(&[&[-1.0, 3.0]]));
        g.relu(x);
        assert_eq!(g.forward().unwrap(), &m(&[&[0.0, 3.0]]));
    }

    #[test]
    fn maxpool_columnwise() {
        let mut g = Graph::new();
        let x = g.input(m(&[&[1.0, 5.0], &[4.0, 2.0]]));
        g.max_pool_rows(x);
        assert_eq!(g.forward().unwrap(), &m(&[&[4.0, 5.0]]));
    }

    #[test]
    fn maxpool_tie_routes_gradient_to_lowest_row() {
        let mut g = Graph::new();
        let x = g.param("x", m(&[&[2.0], &[2.0], &[1.0]]));
        let p = g.max_pool_rows(x);
        g.sum(p);
        g.forward().unwrap();
        g.backward().unwrap();
        assert_eq!(g.grad(x).unwrap(), &m(&[&[1.0], &[0.0], &[0.0]]));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param("x", m(&[&[1.0, -2.0], &[0.5, 3.0]]));
        g.sum(x);
        g.forward().unwrap();
        g.backward().unwrap();
        assert_eq!(g.grad(x).unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn half_squared_norm_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", m(&[&[3.0, 4.0]]));
        let sq = g.square(x);
        let s = g.sum(sq);
        g.scale(s, 0.5);
        assert_eq!(g.forward().unwrap().get(0, 0), 12.5);
        g.backward().unwrap();
        assert_eq!(g.grad(x).unwrap(), &m(&[&[3.0, 4.0]]));
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let mut g = Graph::new();
        let x = g.param("x", m(&[&[1.0, 2.0]]));
        g.sum(x);
        g.forward().unwrap();
        g.backward().unwrap();
        g.backward().unwrap();
        assert_eq!(g.grad(x).unwrap(), &Matrix::filled(1, 2, 2.0));
        g.zero_grad();
        g.backward().unwrap();
        assert_eq!(g.grad(x).unwrap(), &Matrix::filled(1, 2, 1.0));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.param("x", Matrix::zeros(2, 2));
        g.relu(x);
        g.forward().unwrap();
        assert!(matches!(
            g.backward(),
            Err(Error::NonScalarRoot { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn backward_before_forward_rejected() {
        let mut g = Graph::new();
        let x = g.param("x", Matrix::zeros(1, 1));
        g.sum(x);
        assert!(matches!(g.backward(), Err(Error::NotEvaluated)));
    }

    #[test]
    fn shape_error_names_node() {
        let mut g = Graph::new();
        let a = g.input(Matrix::zeros(2, 3));
        let b = g.input(Matrix::zeros(2, 3));
        let p = g.matmul(a, b);
        match g.forward() {
            Err(Error::Shape { node, op, .. }) => {
                assert_eq!(node, p.index());
                assert_eq!(op, "matmul");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bias_must_be_a_matching_row() {
        let mut g = Graph::new();
        let a = g.input(Matrix::zeros(2, 3));
        let b = g.input(Matrix::zeros(2, 3));
        g.add_bias(a, b);
        assert!(matches!(g.forward(), Err(Error::Shape { .. })));
    }

    #[test]
    fn non_finite_leaf_rejected() {
        let mut g = Graph::new();
        let a = g.input(m(&[&[f64::NAN]]));
        g.sum(a);
        assert!(matches!(g.forward(), Err(Error::NonFinite { node: 0, .. })));
    }

    #[test]
    fn distance_345() {
        let d = pairwise_distance(&m(&[&[0.0, 0.0], &[3.0, 4.0]]));
        assert_eq!(d, m(&[&[0.0, 5.0], &[5.0, 0.0]]));
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let mut g = Graph::new();
        let x = g.input(m(&[&[1.0, 2.0, 3.0], &[1000.0, 0.0, -1000.0]]));
        g.log_softmax(x);
        let y = g.forward().unwrap().clone();
        for r in 0..2 {
            let total: f64 = y.row(r).iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
