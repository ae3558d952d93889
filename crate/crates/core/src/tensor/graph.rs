use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::kernels::{self, gemm_nn, gemm_nt, gemm_tn};
use super::{axis_split, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    CausalSoftmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    WeightedSum(Vec<(Var, f64)>),
    Dropout { x: Var, mask: Vec<f64> },
    /// Scalar loss with a precomputed gradient w.r.t. its input.
    Loss { x: Var, grad: Vec<f64> },
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Reverse-mode tape. Every operation appends a node; [`Graph::backward`]
/// replays the nodes in reverse recording order.
///
/// Parameters can be recorded by reference with [`Graph::param`], so one tape
/// per batch costs no parameter copies.
#[derive(Debug, Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Cow::Owned(value), op, rg))
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Owned input that collects a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// Borrowed input that collects a gradient.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// Borrowed input without gradient (frozen parameters at inference).
    pub fn frozen(&mut self, t: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Graph::backward`] loss w.r.t. `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).as_matrix_dims(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a), self.value(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push_op("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul_nt")?;
        let (n, k2) = self.dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.value(a), self.value(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push_op("matmul_nt", Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push_op("add", t, Op::Add(a, b), &[a, b])
    }

    /// Adds `bias[n]` to every length-`n` vector of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.last_dim();
        if tb.len() != n {
            return Err(shape_err("add_row", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        self.push_op("add_row", t, Op::AddRow(x, bias), &[x, bias])
    }

    /// `x · w + b` for a matrix `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * c).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        self.push_op("scale", t, Op::Scale(x, c), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        self.push_op("relu", t, Op::Relu(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = super::softmax(self.value(x), axis)?;
        self.push_op("softmax", t, Op::Softmax { x, axis }, &[x])
    }

    /// Row softmax of a square score matrix where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "causal_softmax")?;
        if m != n {
            return Err(shape_err("causal_softmax", self.value(x), self.value(x)));
        }
        let mut data = self.value(x).data().to_vec();
        for (i, row) in data.chunks_mut(n).enumerate() {
            kernels::softmax_in_place(&mut row[..=i]);
            row[i + 1..].fill(0.0);
        }
        let t = Tensor::new(vec![m, n], data)?;
        self.push_op("causal_softmax", t, Op::CausalSoftmax(x), &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = super::log_softmax(self.value(x))?;
        self.push_op("log_softmax", t, Op::LogSoftmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.last_dim();
        if tg.len() != d || tb.len() != d {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let rows = tx.rows();
        let mut normalized = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let src = tx.row(r);
            let (mean, rs) = kernels::moments(src);
            rstd[r] = rs;
            for j in 0..d {
                let xh = (src[j] - mean) * rs;
                normalized[r * d + j] = xh;
                out[r * d + j] = xh * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normalized,
            rstd,
        };
        self.push_op("layer_norm", t, op, &[x, gain, bias])
    }

    /// Rows of the matrix `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = self.dims(table, "gather")?;
        if ids.is_empty() {
            return Err(Error::Input("gather with no ids".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Vocabulary { id, size: rows });
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        self.push_op("gather", t, op, &[table])
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.dims(x, "slice_cols")?;
        if width == 0 || start + width > n {
            return Err(Error::Shape {
                op: "slice_cols",
                left: vec![m, n],
                right: vec![start, width],
            });
        }
        let tx = self.value(x);
        let mut out = Vec::with_capacity(m * width);
        for r in 0..m {
            out.extend_from_slice(&tx.row(r)[start..start + width]);
        }
        let t = Tensor::new(vec![m, width], out)?;
        self.push_op("slice_cols", t, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Input("concat of nothing".into()))?;
        let (m, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mp, np) = self.dims(p, "concat_cols")?;
            if mp != m {
                return Err(shape_err("concat_cols", self.value(first), self.value(p)));
            }
            widths.push(np);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push_op("concat_cols", t, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        self.push_op("reshape", t, Op::Reshape(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push_op("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `Σ wᵢ·xᵢ` over same-shaped values.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *terms
            .first()
            .ok_or_else(|| Error::Input("weighted sum of nothing".into()))?;
        let shape = self.value(first).shape().to_vec();
        let mut out = vec![0.0; self.value(first).len()];
        for &(v, w) in terms {
            let tv = self.value(v);
            if tv.shape() != shape.as_slice() {
                return Err(shape_err("weighted_sum", self.value(first), tv));
            }
            for (o, x) in out.iter_mut().zip(tv.data()) {
                *o += w * x;
            }
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let t = Tensor::new(shape, out)?;
        self.push_op("weighted_sum", t, Op::WeightedSum(terms.to_vec()), &inputs)
    }

    /// Inverted dropout. `rate == 0` records nothing and returns `x`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::Config("dropout rate must be below 1".into()));
        }
        let keep = 1.0 / (1.0 - rate);
        let tx = self.value(x);
        let mask: Vec<f64> = (0..tx.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        self.push_op("dropout", t, Op::Dropout { x, mask }, &[x])
    }

    /// Scalar loss node whose gradient w.r.t. `x` was computed outside the tape.
    pub fn loss(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
        if grad.len() != self.value(x).len() {
            return Err(Error::Shape {
                op: "loss",
                left: self.value(x).shape().to_vec(),
                right: vec![grad.len()],
            });
        }
        self.push_op("loss", Tensor::scalar(value), Op::Loss { x, grad }, &[x])
    }

    /// Clears all gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let n = node.value.len();
        let g = node.grad.get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    /// Back-propagates from the scalar `loss`, accumulating into every
    /// reachable node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: self.value(loss).shape().to_vec(),
                right: vec![1],
            });
        }
        self.zero_grad();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = self.nodes[i].grad.take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
                self.backward_op(i, &op, &dy);
                self.nodes[i].op = op;
            }
            self.nodes[i].grad = Some(dy);
        }
        Ok(())
    }

    fn backward_op(&mut self, i: usize, op: &Op, dy: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(a).as_matrix_dims("").unwrap();
                let n = self.value(b).last_dim();
                if self.requires_grad(a) {
                    let bv = self.value(b).data().to_vec();
                    self.accumulate(a, |g| gemm_nt(dy, &bv, g, m, n, k));
                }
                if self.requires_grad(b) {
                    let av = self.value(a).data().to_vec();
                    self.accumulate(b, |g| gemm_tn(&av, dy, g, m, k, n));
                }
            }
            Op::MatMulNt(a, b) => {
                // c = a·bᵀ: da = dc·b, db = dcᵀ·a
                let (m, k) = self.value(a).as_matrix_dims("").unwrap();
                let n = self.value(b).shape()[0];
                if self.requires_grad(a) {
                    let bv = self.value(b).data().to_vec();
                    self.accumulate(a, |g| gemm_nn(dy, &bv, g, m, n, k));
                }
                if self.requires_grad(b) {
                    let av = self.value(a).data().to_vec();
                    self.accumulate(b, |g| gemm_tn(dy, &av, g, m, n, k));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, |g| add_into(g, dy));
                self.accumulate(b, |g| add_into(g, dy));
            }
            Op::AddRow(x, bias) => {
                self.accumulate(x, |g| add_into(g, dy));
                let n = self.value(bias).len();
                self.accumulate(bias, |g| {
                    for row in dy.chunks(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::Scale(x, c) => self.accumulate(x, |g| {
                for (gv, d) in g.iter_mut().zip(dy) {
                    *gv += c * d;
                }
            }),
            Op::Relu(x) => {
                let y = self.nodes[i].value.data().to_vec();
                self.accumulate(x, |g| {
                    for ((gv, d), yv) in g.iter_mut().zip(dy).zip(&y) {
                        if *yv > 0.0 {
                            *gv += d;
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[i].value.data().to_vec();
                let (outer, n, inner) = axis_split(self.nodes[i].value.shape(), axis);
                self.accumulate(x, |g| {
                    for o in 0..outer {
                        for inn in 0..inner {
                            let idx = |j: usize| o * n * inner + j * inner + inn;
                            let s: f64 = (0..n).map(|j| dy[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                g[idx(j)] += y[idx(j)] * (dy[idx(j)] - s);
                            }
                        }
                    }
                });
            }
            Op::CausalSoftmax(x) => {
                let y = self.nodes[i].value.data().to_vec();
                let n = self.nodes[i].value.last_dim();
                self.accumulate(x, |g| softmax_rows_backward(g, dy, &y, n));
            }
            Op::LogSoftmax(x) => {
                let y = self.nodes[i].value.data().to_vec();
                let n = self.nodes[i].value.last_dim();
                self.accumulate(x, |g| {
                    for ((gr, dr), yr) in g.chunks_mut(n).zip(dy.chunks(n)).zip(y.chunks(n)) {
                        let s: f64 = dr.iter().sum();
                        for j in 0..n {
                            gr[j] += dr[j] - crate::math::exp(yr[j]) * s;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                ref normalized,
                ref rstd,
            } => {
                let d = self.value(gain).len();
                let gv = self.value(gain).data().to_vec();
                self.accumulate(gain, |g| {
                    for (dr, nr) in dy.chunks(d).zip(normalized.chunks(d)) {
                        for j in 0..d {
                            g[j] += dr[j] * nr[j];
                        }
                    }
                });
                self.accumulate(bias, |g| {
                    for dr in dy.chunks(d) {
                        add_into(g, dr);
                    }
                });
                self.accumulate(x, |g| {
                    let mut gh = vec![0.0; d];
                    for (r, ((gr, dr), nr)) in g
                        .chunks_mut(d)
                        .zip(dy.chunks(d))
                        .zip(normalized.chunks(d))
                        .enumerate()
                    {
                        for j in 0..d {
                            gh[j] = dr[j] * gv[j];
                        }
                        let mean_g = gh.iter().sum::<f64>() / d as f64;
                        let mean_gx = gh.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gr[j] += rstd[r] * (gh[j] - mean_g - nr[j] * mean_gx);
                        }
                    }
                });
            }
            Op::Gather { table, ref ids } => {
                let d = self.value(table).last_dim();
                self.accumulate(table, |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * d..(id + 1) * d], &dy[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let n = self.value(x).last_dim();
                let w = self.nodes[i].value.last_dim();
                self.accumulate(x, |g| {
                    for (gr, dr) in g.chunks_mut(n).zip(dy.chunks(w)) {
                        add_into(&mut gr[start..start + w], dr);
                    }
                });
            }
            Op::ConcatCols(ref parts) => {
                let n = self.nodes[i].value.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    self.accumulate(p, |g| {
                        for (gr, dr) in g.chunks_mut(w).zip(dy.chunks(n)) {
                            add_into(gr, &dr[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Reshape(x) => self.accumulate(x, |g| add_into(g, dy)),
            Op::Sum(x) => self.accumulate(x, |g| {
                for gv in g.iter_mut() {
                    *gv += dy[0];
                }
            }),
            Op::WeightedSum(ref terms) => {
                for &(v, w) in terms {
                    self.accumulate(v, |g| {
                        for (gv, d) in g.iter_mut().zip(dy) {
                            *gv += w * d;
                        }
                    });
                }
            }
            Op::Dropout { x, ref mask } => self.accumulate(x, |g| {
                for ((gv, d), m) in g.iter_mut().zip(dy).zip(mask) {
                    *gv += d * m;
                }
            }),
            Op::Loss { x, ref grad } => self.accumulate(x, |g| {
                for (gv, lg) in g.iter_mut().zip(grad) {
                    *gv += dy[0] * lg;
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_rows_backward(g: &mut [f64], dy: &[f64], y: &[f64], n: usize) {
    for ((gr, dr), yr) in g.chunks_mut(n).zip(dy.chunks(n)).zip(y.chunks(n)) {
        let s: f64 = dr.iter().zip(yr).map(|(a, b)| a * b).sum();
        for j in 0..n {
            gr[j] += yr[j] * (dr[j] - s);
        }
    }
}
