use std::ops::Range;

use super::tape::{Node, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(super) enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    MatMulNt { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    AddRow { a: usize, bias: usize },
    Scale { a: usize, c: f64 },
    RowScale { a: usize, s: usize },
    RowDot { a: usize, b: usize },
    Tanh { a: usize },
    Softplus { a: usize },
    LogSigmoid { a: usize },
    SoftmaxRows { a: usize },
    CrossEntropy { a: usize, targets: Vec<usize> },
    Concat { inputs: Vec<usize>, widths: Vec<usize> },
    ConcatRows { inputs: Vec<usize>, heights: Vec<usize> },
    SliceCols { a: usize, start: usize },
    SliceRows { a: usize, start: usize },
    GatherRows { a: usize, indices: Vec<usize> },
    Reshape { a: usize },
    Sum { a: usize },
    SumCols { a: usize },
    SumSquares { a: usize },
    BlockGram { a: usize, b: usize, blocks: usize },
    NormalizeRows { a: usize },
}

pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x) = -softplus(-x)`
pub fn log_sigmoid_scalar(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[m,n] += A[m,k] · B[k,n]`
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

/// `out[m,n] += A[m,k] · B[n,k]ᵀ`
fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k,n] += A[m,k]ᵀ · B[m,n]`
fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, brow, &mut out[p * n..(p + 1) * n]);
            }
        }
    }
}

/// (rows, width) when a 1-D tensor is read as a column of scalars.
fn row_layout(t: &Tensor) -> (usize, usize) {
    match t.shape().len() {
        2 => (t.shape()[0], t.shape()[1]),
        _ => (t.numel(), 1),
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Backward("operands recorded on different tapes".into()))
        }
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'t> {
        let requires_grad = {
            let nodes = self.tape.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.tape.push(value, op, requires_grad)
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = {
            let x = self.value();
            Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&e| f(e)).collect())
        };
        self.record(v, op, &[self.id])
    }

    /// Matrix product `A·B`.
    pub fn matmul(self, b: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&b)?;
        let v = {
            let (x, y) = (self.value(), b.value());
            let (m, k) = (x.rows(), x.cols());
            let (k2, n) = (y.rows(), y.cols());
            if k != k2 || y.shape().len() != 2 {
                return Err(shape_err("matmul", x.shape(), y.shape()));
            }
            let mut out = vec![0.0; m * n];
            gemm_nn(x.data(), y.data(), &mut out, m, k, n);
            Tensor::from_parts(vec![m, n], out)
        };
        Ok(self.record(v, Op::MatMul { a: self.id, b: b.id }, &[self.id, b.id]))
    }

    /// Product with a transposed right operand, `A·Bᵀ`. Weights are stored as
    /// `[out, in]`, so a batch of row vectors is projected with this.
    pub fn matmul_nt(self, b: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&b)?;
        let v = {
            let (x, y) = (self.value(), b.value());
            let (m, k) = (x.rows(), x.cols());
            let (n, k2) = (y.rows(), y.cols());
            if k != k2 {
                return Err(shape_err("matmul_nt", x.shape(), y.shape()));
            }
            let mut out = vec![0.0; m * n];
            gemm_nt(x.data(), y.data(), &mut out, m, k, n);
            Tensor::from_parts(vec![m, n], out)
        };
        Ok(self.record(v, Op::MatMulNt { a: self.id, b: b.id }, &[self.id, b.id]))
    }

    fn zip_with(self, b: Var<'t>, name: &str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        self.same_tape(&b)?;
        let v = {
            let (x, y) = (self.value(), b.value());
            if x.shape() != y.shape() {
                return Err(shape_err(name, x.shape(), y.shape()));
            }
            let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        Ok(self.record(v, op, &[self.id, b.id]))
    }

    pub fn add(self, b: Var<'t>) -> Result<Var<'t>> {
        self.zip_with(b, "add", Op::Add { a: self.id, b: b.id }, |p, q| p + q)
    }

    pub fn sub(self, b: Var<'t>) -> Result<Var<'t>> {
        self.zip_with(b, "sub", Op::Sub { a: self.id, b: b.id }, |p, q| p - q)
    }

    /// Adds a bias vector to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias)?;
        let v = {
            let (x, b) = (self.value(), bias.value());
            let c = x.cols();
            if b.numel() != c {
                return Err(shape_err("add_row", x.shape(), b.shape()));
            }
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(c) {
                for (r, bb) in row.iter_mut().zip(b.data()) {
                    *r += bb;
                }
            }
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        Ok(self.record(v, Op::AddRow { a: self.id, bias: bias.id }, &[self.id, bias.id]))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale { a: self.id, c }, |x| c * x)
    }

    /// Multiplies row `r` by `s[r]`.
    pub fn row_scale(self, s: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&s)?;
        let v = {
            let (x, w) = (self.value(), s.value());
            let (n, c) = (x.rows(), x.cols());
            if w.numel() != n {
                return Err(shape_err("row_scale", x.shape(), w.shape()));
            }
            let mut data = x.data().to_vec();
            for (row, &f) in data.chunks_mut(c).zip(w.data()) {
                row.iter_mut().for_each(|e| *e *= f);
            }
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        Ok(self.record(v, Op::RowScale { a: self.id, s: s.id }, &[self.id, s.id]))
    }

    /// Row-wise dot products: `[N, D] × [N, D] → [N]`.
    pub fn rowdot(self, b: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&b)?;
        let v = {
            let (x, y) = (self.value(), b.value());
            if x.shape() != y.shape() {
                return Err(shape_err("rowdot", x.shape(), y.shape()));
            }
            let c = x.cols();
            let data: Vec<f64> = x
                .data()
                .chunks(c)
                .zip(y.data().chunks(c))
                .map(|(p, q)| dot(p, q))
                .collect();
            Tensor::from_parts(vec![data.len()], data)
        };
        Ok(self.record(v, Op::RowDot { a: self.id, b: b.id }, &[self.id, b.id]))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh { a: self.id }, f64::tanh)
    }

    /// `ln(1 + eˣ)` in the overflow-safe form.
    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus { a: self.id }, softplus_scalar)
    }

    pub fn log_sigmoid(self) -> Var<'t> {
        self.unary(Op::LogSigmoid { a: self.id }, log_sigmoid_scalar)
    }

    pub fn softmax_rows(self) -> Var<'t> {
        let v = {
            let x = self.value();
            let c = x.cols();
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(c) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for e in row.iter_mut() {
                    *e = (*e - m).exp();
                    z += *e;
                }
                row.iter_mut().for_each(|e| *e /= z);
            }
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        self.record(v, Op::SoftmaxRows { a: self.id }, &[self.id])
    }

    /// Per-row softmax cross-entropy against integer targets: `[N, C] → [N]`.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            let (n, c) = (x.rows(), x.cols());
            if targets.len() != n {
                return Err(Error::Shape(format!(
                    "cross_entropy: {} targets for {} rows",
                    targets.len(),
                    n
                )));
            }
            let mut out = Vec::with_capacity(n);
            for (row, &t) in x.data().chunks(c).zip(targets) {
                if t >= c {
                    return Err(Error::Index { index: t, size: c });
                }
                out.push(log_sum_exp(row) - row[t]);
            }
            Tensor::from_parts(vec![n], out)
        };
        Ok(self.record(
            v,
            Op::CrossEntropy {
                a: self.id,
                targets: targets.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Concatenation along the last axis.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let mut widths = Vec::with_capacity(parts.len());
        let v = {
            let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let rank = vals[0].shape().len();
            let rows = vals[0].rows();
            for (p, val) in parts.iter().zip(&vals) {
                first.same_tape(p)?;
                if val.shape().len() != rank || val.rows() != rows {
                    return Err(shape_err("concat", vals[0].shape(), val.shape()));
                }
                widths.push(val.cols());
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for val in &vals {
                    data.extend_from_slice(val.row(r));
                }
            }
            let shape = if rank == 2 { vec![rows, total] } else { vec![total] };
            Tensor::from_parts(shape, data)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(first.record(
            v,
            Op::Concat {
                inputs: ids.clone(),
                widths,
            },
            &ids,
        ))
    }

    /// Stacks tensors along the first axis.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat_rows of zero tensors".into()))?;
        let mut heights = Vec::with_capacity(parts.len());
        let v = {
            let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let rank = vals[0].shape().len();
            let (_, width) = row_layout(&vals[0]);
            let mut data = Vec::new();
            for (p, val) in parts.iter().zip(&vals) {
                first.same_tape(p)?;
                let (h, w) = row_layout(val);
                if val.shape().len() != rank || w != width {
                    return Err(shape_err("concat_rows", vals[0].shape(), val.shape()));
                }
                heights.push(h);
                data.extend_from_slice(val.data());
            }
            let total: usize = heights.iter().sum();
            let shape = if rank == 2 { vec![total, width] } else { vec![total] };
            Tensor::from_parts(shape, data)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(first.record(
            v,
            Op::ConcatRows {
                inputs: ids.clone(),
                heights,
            },
            &ids,
        ))
    }

    /// Columns `range` of every row (elements of a 1-D tensor).
    pub fn slice(self, range: Range<usize>) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            let c = x.cols();
            if range.start >= range.end || range.end > c {
                return Err(Error::Shape(format!(
                    "slice {range:?} out of bounds for shape {:?}",
                    x.shape()
                )));
            }
            let mut data = Vec::with_capacity(x.rows() * range.len());
            for r in 0..x.rows() {
                data.extend_from_slice(&x.row(r)[range.clone()]);
            }
            let shape = if x.shape().len() == 2 {
                vec![x.rows(), range.len()]
            } else {
                vec![range.len()]
            };
            Tensor::from_parts(shape, data)
        };
        Ok(self.record(
            v,
            Op::SliceCols {
                a: self.id,
                start: range.start,
            },
            &[self.id],
        ))
    }

    pub fn slice_rows(self, range: Range<usize>) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            let (n, w) = row_layout(&x);
            if range.start >= range.end || range.end > n {
                return Err(Error::Shape(format!(
                    "slice_rows {range:?} out of bounds for shape {:?}",
                    x.shape()
                )));
            }
            let data = x.data()[range.start * w..range.end * w].to_vec();
            let shape = if x.shape().len() == 2 {
                vec![range.len(), w]
            } else {
                vec![range.len()]
            };
            Tensor::from_parts(shape, data)
        };
        Ok(self.record(
            v,
            Op::SliceRows {
                a: self.id,
                start: range.start,
            },
            &[self.id],
        ))
    }

    /// Row lookup; the backward pass scatter-adds into the selected rows only.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t>> {
        if indices.is_empty() {
            return Err(Error::Shape("gather_rows with no indices".into()));
        }
        let v = {
            let x = self.value();
            let (n, w) = row_layout(&x);
            let mut data = Vec::with_capacity(indices.len() * w);
            for &i in indices {
                if i >= n {
                    return Err(Error::Index { index: i, size: n });
                }
                data.extend_from_slice(&x.data()[i * w..(i + 1) * w]);
            }
            let shape = if x.shape().len() == 2 {
                vec![indices.len(), w]
            } else {
                vec![indices.len()]
            };
            Tensor::from_parts(shape, data)
        };
        Ok(self.record(
            v,
            Op::GatherRows {
                a: self.id,
                indices: indices.to_vec(),
            },
            &[self.id],
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            Tensor::new(shape.to_vec(), x.data().to_vec())?
        };
        Ok(self.record(v, Op::Reshape { a: self.id }, &[self.id]))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.record(v, Op::Sum { a: self.id }, &[self.id])
    }

    /// Sum of each row: `[N, D] → [N]`.
    pub fn sum_cols(self) -> Var<'t> {
        let v = {
            let x = self.value();
            let data: Vec<f64> = x.data().chunks(x.cols()).map(|r| r.iter().sum()).collect();
            Tensor::from_parts(vec![data.len()], data)
        };
        self.record(v, Op::SumCols { a: self.id }, &[self.id])
    }

    pub fn sum_squares(self) -> Var<'t> {
        let v = {
            let x = self.value();
            Tensor::scalar(dot(x.data(), x.data()))
        };
        self.record(v, Op::SumSquares { a: self.id }, &[self.id])
    }

    /// Per-row Gram matrices between the `blocks` contiguous chunks of `self`
    /// and of `other`: `[B, blocks·w] × [B, blocks·w] → [B·blocks, blocks]`,
    /// with row `b·blocks + k`, column `n` holding `self[b]^k · other[b]^n`.
    pub fn block_gram(self, other: Var<'t>, blocks: usize) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let v = {
            let (x, y) = (self.value(), other.value());
            if x.shape() != y.shape() || blocks == 0 || x.cols() % blocks != 0 {
                return Err(shape_err("block_gram", x.shape(), y.shape()));
            }
            let (n, c) = (x.rows(), x.cols());
            let w = c / blocks;
            let mut data = Vec::with_capacity(n * blocks * blocks);
            for r in 0..n {
                let (xr, yr) = (x.row(r), y.row(r));
                for k in 0..blocks {
                    let xk = &xr[k * w..(k + 1) * w];
                    for m in 0..blocks {
                        data.push(dot(xk, &yr[m * w..(m + 1) * w]));
                    }
                }
            }
            Tensor::from_parts(vec![n * blocks, blocks], data)
        };
        Ok(self.record(
            v,
            Op::BlockGram {
                a: self.id,
                b: other.id,
                blocks,
            },
            &[self.id, other.id],
        ))
    }

    /// Scales each row to unit Euclidean norm (norms floored at 1e-12).
    pub fn normalize_rows(self) -> Var<'t> {
        let v = {
            let x = self.value();
            let c = x.cols();
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(c) {
                let norm = dot(row, row).sqrt().max(NORM_FLOOR);
                row.iter_mut().for_each(|e| *e /= norm);
            }
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        self.record(v, Op::NormalizeRows { a: self.id }, &[self.id])
    }
}

const NORM_FLOOR: f64 = 1e-12;

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&e| (e - m).exp()).sum::<f64>().ln()
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn wants(nodes: &[Node], id: usize) -> bool {
    nodes[id].requires_grad
}

fn elementwise(x: &Tensor, g: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = x.data().iter().zip(g.data()).map(|(&xi, &gi)| f(xi, gi)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

pub(super) fn backward(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (x, y) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (x.rows(), x.cols(), y.cols());
            if wants(nodes, *a) {
                let mut d = vec![0.0; m * k];
                gemm_nt(g.data(), y.data(), &mut d, m, n, k);
                accumulate(nodes, grads, *a, Tensor::from_parts(x.shape().to_vec(), d));
            }
            if wants(nodes, *b) {
                let mut d = vec![0.0; k * n];
                gemm_tn(x.data(), g.data(), &mut d, m, k, n);
                accumulate(nodes, grads, *b, Tensor::from_parts(y.shape().to_vec(), d));
            }
        }
        Op::MatMulNt { a, b } => {
            let (x, y) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (x.rows(), x.cols(), y.rows());
            if wants(nodes, *a) {
                let mut d = vec![0.0; m * k];
                gemm_nn(g.data(), y.data(), &mut d, m, n, k);
                accumulate(nodes, grads, *a, Tensor::from_parts(x.shape().to_vec(), d));
            }
            if wants(nodes, *b) {
                let mut d = vec![0.0; n * k];
                gemm_tn(g.data(), x.data(), &mut d, m, n, k);
                accumulate(nodes, grads, *b, Tensor::from_parts(y.shape().to_vec(), d));
            }
        }
        Op::Add { a, b } => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub { a, b } => {
            accumulate(nodes, grads, *a, g.clone());
            if wants(nodes, *b) {
                let neg = elementwise(g, g, |gi, _| -gi);
                accumulate(nodes, grads, *b, neg);
            }
        }
        Op::AddRow { a, bias } => {
            accumulate(nodes, grads, *a, g.clone());
            if wants(nodes, *bias) {
                let bshape = nodes[*bias].value.shape().to_vec();
                let mut d = vec![0.0; g.cols()];
                for row in g.data().chunks(g.cols()) {
                    for (di, gi) in d.iter_mut().zip(row) {
                        *di += gi;
                    }
                }
                accumulate(nodes, grads, *bias, Tensor::from_parts(bshape, d));
            }
        }
        Op::Scale { a, c } => {
            accumulate(nodes, grads, *a, elementwise(g, g, |gi, _| c * gi));
        }
        Op::RowScale { a, s } => {
            let (x, w) = (&nodes[*a].value, &nodes[*s].value);
            let c = x.cols();
            if wants(nodes, *a) {
                let mut d = g.data().to_vec();
                for (row, &f) in d.chunks_mut(c).zip(w.data()) {
                    row.iter_mut().for_each(|e| *e *= f);
                }
                accumulate(nodes, grads, *a, Tensor::from_parts(x.shape().to_vec(), d));
            }
            if wants(nodes, *s) {
                let d = g
                    .data()
                    .chunks(c)
                    .zip(x.data().chunks(c))
                    .map(|(gr, xr)| dot(gr, xr))
                    .collect();
                accumulate(nodes, grads, *s, Tensor::from_parts(w.shape().to_vec(), d));
            }
        }
        Op::RowDot { a, b } => {
            let (x, y) = (&nodes[*a].value, &nodes[*b].value);
            let c = x.cols();
            let scaled = |other: &Tensor| {
                let mut d = other.data().to_vec();
                for (row, &gi) in d.chunks_mut(c).zip(g.data()) {
                    row.iter_mut().for_each(|e| *e *= gi);
                }
                Tensor::from_parts(other.shape().to_vec(), d)
            };
            if wants(nodes, *a) {
                accumulate(nodes, grads, *a, scaled(y));
            }
            if wants(nodes, *b) {
                accumulate(nodes, grads, *b, scaled(x));
            }
        }
        Op::Tanh { a } => {
            accumulate(nodes, grads, *a, elementwise(out, g, |y, gi| gi * (1.0 - y * y)));
        }
        Op::Softplus { a } => {
            let x = &nodes[*a].value;
            accumulate(nodes, grads, *a, elementwise(x, g, |xi, gi| gi * sigmoid_scalar(xi)));
        }
        Op::LogSigmoid { a } => {
            let x = &nodes[*a].value;
            accumulate(nodes, grads, *a, elementwise(x, g, |xi, gi| gi * sigmoid_scalar(-xi)));
        }
        Op::SoftmaxRows { a } => {
            let c = out.cols();
            let mut d = Vec::with_capacity(out.numel());
            for (yr, gr) in out.data().chunks(c).zip(g.data().chunks(c)) {
                let s = dot(yr, gr);
                d.extend(yr.iter().zip(gr).map(|(y, gi)| y * (gi - s)));
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(out.shape().to_vec(), d));
        }
        Op::CrossEntropy { a, targets } => {
            let x = &nodes[*a].value;
            let c = x.cols();
            let mut d = Vec::with_capacity(x.numel());
            for ((row, &t), &gi) in x.data().chunks(c).zip(targets).zip(g.data()) {
                let lse = log_sum_exp(row);
                for (j, &z) in row.iter().enumerate() {
                    let p = (z - lse).exp();
                    d.push(gi * (p - if j == t { 1.0 } else { 0.0 }));
                }
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::Concat { inputs, widths } => {
            let total = g.cols();
            let rows = g.rows();
            let mut offset = 0;
            for (&inp, &w) in inputs.iter().zip(widths) {
                if wants(nodes, inp) {
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    let shape = nodes[inp].value.shape().to_vec();
                    accumulate(nodes, grads, inp, Tensor::from_parts(shape, d));
                }
                offset += w;
            }
        }
        Op::ConcatRows { inputs, heights } => {
            let (_, w) = row_layout(g);
            let mut offset = 0;
            for (&inp, &h) in inputs.iter().zip(heights) {
                if wants(nodes, inp) {
                    let d = g.data()[offset * w..(offset + h) * w].to_vec();
                    let shape = nodes[inp].value.shape().to_vec();
                    accumulate(nodes, grads, inp, Tensor::from_parts(shape, d));
                }
                offset += h;
            }
        }
        Op::SliceCols { a, start } => {
            let x = &nodes[*a].value;
            let (c, w) = (x.cols(), g.cols());
            let mut d = vec![0.0; x.numel()];
            for r in 0..x.rows() {
                d[r * c + start..r * c + start + w].copy_from_slice(g.row(r));
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::SliceRows { a, start } => {
            let x = &nodes[*a].value;
            let (_, w) = row_layout(x);
            let mut d = vec![0.0; x.numel()];
            d[start * w..start * w + g.numel()].copy_from_slice(g.data());
            accumulate(nodes, grads, *a, Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::GatherRows { a, indices } => {
            let x = &nodes[*a].value;
            let (_, w) = row_layout(x);
            let mut d = vec![0.0; x.numel()];
            for (k, &i) in indices.iter().enumerate() {
                axpy(1.0, &g.data()[k * w..(k + 1) * w], &mut d[i * w..(i + 1) * w]);
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::Reshape { a } => {
            let shape = nodes[*a].value.shape().to_vec();
            accumulate(nodes, grads, *a, Tensor::from_parts(shape, g.data().to_vec()));
        }
        Op::Sum { a } => {
            let x = &nodes[*a].value;
            accumulate(nodes, grads, *a, Tensor::full(x.shape(), g.item()));
        }
        Op::SumCols { a } => {
            let x = &nodes[*a].value;
            let c = x.cols();
            let mut d = Vec::with_capacity(x.numel());
            for &gi in g.data() {
                d.extend(std::iter::repeat_n(gi, c));
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::SumSquares { a } => {
            let x = &nodes[*a].value;
            let gi = g.item();
            accumulate(nodes, grads, *a, elementwise(x, x, |xi, _| 2.0 * xi * gi));
        }
        Op::BlockGram { a, b, blocks } => {
            let (x, y) = (&nodes[*a].value, &nodes[*b].value);
            let (n, c) = (x.rows(), x.cols());
            let blocks = *blocks;
            let w = c / blocks;
            let mut dx = vec![0.0; x.numel()];
            let mut dy = vec![0.0; y.numel()];
            for r in 0..n {
                let (xr, yr) = (x.row(r), y.row(r));
                for k in 0..blocks {
                    for m in 0..blocks {
                        let gi = g.data()[(r * blocks + k) * blocks + m];
                        if gi == 0.0 {
                            continue;
                        }
                        axpy(gi, &yr[m * w..(m + 1) * w], &mut dx[r * c + k * w..r * c + (k + 1) * w]);
                        axpy(gi, &xr[k * w..(k + 1) * w], &mut dy[r * c + m * w..r * c + (m + 1) * w]);
                    }
                }
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(x.shape().to_vec(), dx));
            accumulate(nodes, grads, *b, Tensor::from_parts(y.shape().to_vec(), dy));
        }
        Op::NormalizeRows { a } => {
            let x = &nodes[*a].value;
            let c = x.cols();
            let mut d = Vec::with_capacity(x.numel());
            for ((xr, yr), gr) in x.data().chunks(c).zip(out.data().chunks(c)).zip(g.data().chunks(c)) {
                let raw = dot(xr, xr).sqrt();
                if raw < NORM_FLOOR {
                    d.extend(gr.iter().map(|gi| gi / NORM_FLOOR));
                } else {
                    let s = dot(yr, gr);
                    d.extend(yr.iter().zip(gr).map(|(y, gi)| (gi - y * s) / raw));
                }
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(x.shape().to_vec(), d));
        }
    }
}
