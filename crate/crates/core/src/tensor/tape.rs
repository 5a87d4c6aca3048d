//! Reverse-mode tape over matrix-valued nodes.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep simply walks it in reverse.
//! Parameters are copied onto the tape when recorded; gradients flow back
//! into the `grad` slots of the owning [`ParamSet`].
//!
//! Shape errors are programming errors and panic with a `contract violation` message.

use rand::Rng;

use super::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Input,
    Param(ParamId),
    Gather { param: ParamId, ids: Vec<usize> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Mse(Var, Vec<f64>),
    /// Scalar-valued fused op with precomputed local gradients.
    Fused(Vec<(Var, Vec<f64>)>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn contract(msg: String) -> ! {
    panic!("contract violation: {msg}")
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

/// `out[m x n] += a[m x k] * b[k x n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x k] += g[m x n] * b[k x n]^T`
fn gemm_a_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] += g_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k x n] += a[m x k]^T * g[m x n]`
fn gemm_at_b_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn mat(&self, v: Var) -> (&[f64], usize, usize) {
        let t = self.value(v);
        (t.data(), t.rows(), t.cols())
    }

    /// A leaf holding `t`; its gradient is available from [`Gradients::get`].
    pub fn input(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.clear_grad();
        self.push(t, Op::Input)
    }

    /// A leaf that carries no gradient back to anything it was computed from.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let mut t = params.get(id).clone();
        t.clear_grad();
        self.push(t, Op::Param(id))
    }

    /// Rows `ids` of an embedding table, as a `ids.len() x d` matrix.
    pub fn gather(&mut self, params: &ParamSet, id: ParamId, ids: &[usize]) -> Var {
        let table = params.get(id);
        let (rows, d) = dims(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= rows {
                contract(format!("gather row {i} from table with {rows} rows"));
            }
            data.extend_from_slice(table.row_slice(i));
        }
        self.push(
            Tensor::matrix(ids.len(), d, data),
            Op::Gather {
                param: id,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ad, m, k) = self.mat(a);
        let (bd, k2, n) = self.mat(b);
        if k != k2 {
            contract(format!("matmul {m}x{k} by {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(ad, bd, &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (ad, m, n) = self.mat(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ad[i * n + j];
            }
        }
        self.push(Tensor::matrix(n, m, out), Op::Transpose(a))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        if dims(self.value(a)) != dims(self.value(b)) {
            contract(format!(
                "{what}: shapes {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        self.same_shape(a, b, what);
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1 x n` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ad, m, n) = self.mat(a);
        let (rd, rm, rn) = self.mat(row);
        if rm != 1 || rn != n {
            contract(format!("add_row {m}x{n} with {rm}x{rn}"));
        }
        let mut out = ad.to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, r) in chunk.iter_mut().zip(rd) {
                *o += r;
            }
        }
        self.push(Tensor::matrix(m, n, out), Op::AddRow(a, row))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    /// Softmax over the last axis. Entries may be `-inf` as long as each row keeps a finite one.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (ad, m, n) = self.mat(a);
        let mut out = ad.to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(Tensor::matrix(m, n, out), Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        if parts.is_empty() {
            contract("concat of nothing".into());
        }
        let m = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != m) {
            contract("concat_cols with differing row counts".into());
        }
        let n: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        self.push(Tensor::matrix(m, n, out), Op::ConcatCols(parts.to_vec()))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        if parts.is_empty() {
            contract("concat of nothing".into());
        }
        let n = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != n) {
            contract("concat_rows with differing column counts".into());
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let m = out.len() / n.max(1);
        self.push(Tensor::matrix(m, n, out), Op::ConcatRows(parts.to_vec()))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (ad, m, n) = self.mat(a);
        if start >= end || end > m {
            contract(format!("slice_rows {start}..{end} of {m} rows"));
        }
        let data = ad[start * n..end * n].to_vec();
        self.push(Tensor::matrix(end - start, n, data), Op::SliceRows(a, start))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        self.slice_rows(a, r, r + 1)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (ad, m, n) = self.mat(a);
        if start >= end || end > n {
            contract(format!("slice_cols {start}..{end} of {n} columns"));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&ad[r * n + start..r * n + end]);
        }
        self.push(Tensor::matrix(m, w, out), Op::SliceCols(a, start))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` while training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, train: bool, rng: &mut R) -> Var {
        if !(0.0..1.0).contains(&rate) {
            contract(format!("dropout rate {rate}"));
        }
        if !train || rate == 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Dropout(a, mask))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Column-wise mean: `m x n` to `1 x n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (ad, m, n) = self.mat(a);
        let mut out = vec![0.0; n];
        for row in ad.chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        self.push(Tensor::row(out), Op::MeanRows(a))
    }

    /// Mean squared difference from constant `target`; no gradient reaches the target.
    pub fn mse(&mut self, a: Var, target: &[f64]) -> Var {
        let t = self.value(a);
        if t.len() != target.len() || target.is_empty() {
            contract(format!("mse over {} values with {} targets", t.len(), target.len()));
        }
        let s = t
            .data()
            .iter()
            .zip(target)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / target.len() as f64;
        self.push(Tensor::scalar(s), Op::Mse(a, target.to_vec()))
    }

    /// Records a scalar computed outside the tape, with its gradient with respect to each input.
    pub fn fused_scalar(&mut self, value: f64, local_grads: Vec<(Var, Vec<f64>)>) -> Var {
        for (v, g) in &local_grads {
            if self.value(*v).len() != g.len() {
                contract("fused gradient length differs from input".into());
            }
        }
        self.push(Tensor::scalar(value), Op::Fused(local_grads))
    }

    /// Back-propagates from the scalar `output` over the whole tape.
    pub fn gradients(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::Contract(format!(
                "backward from non-scalar of shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let n = self.nodes[v.0].value.len();
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
                f(slot);
            };
            let out = &node.value;
            match &node.op {
                Op::Input | Op::Param(_) | Op::Gather { .. } => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ad, m, k) = self.mat(*a);
                    let (bd, _, n) = self.mat(*b);
                    acc(*a, &mut |s| gemm_a_bt_acc(&g, bd, s, m, k, n));
                    acc(*b, &mut |s| gemm_at_b_acc(ad, &g, s, m, k, n));
                }
                Op::Transpose(a) => {
                    let (m, n) = dims(out);
                    acc(*a, &mut |s| {
                        for i in 0..m {
                            for j in 0..n {
                                s[j * m + i] += g[i * n + j];
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |s| add_into(s, &g));
                    acc(*b, &mut |s| add_into(s, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |s| add_into(s, &g));
                    acc(*b, &mut |s| s.iter_mut().zip(&g).for_each(|(x, y)| *x -= y));
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * bd[i];
                        }
                    });
                    acc(*b, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * ad[i];
                        }
                    });
                }
                Op::AddRow(a, row) => {
                    acc(*a, &mut |s| add_into(s, &g));
                    let n = out.cols();
                    acc(*row, &mut |s| {
                        for chunk in g.chunks(n) {
                            add_into(s, chunk);
                        }
                    });
                }
                Op::Scale(a, c) => acc(*a, &mut |s| {
                    s.iter_mut().zip(&g).for_each(|(x, y)| *x += c * y)
                }),
                Op::Sigmoid(a) => {
                    let y = out.data();
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * y[i] * (1.0 - y[i]);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = out.data();
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * (1.0 - y[i] * y[i]);
                        }
                    });
                }
                Op::Softplus(a) => {
                    let x = self.value(*a).data();
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * sigmoid(x[i]);
                        }
                    });
                }
                Op::Exp(a) => {
                    let y = out.data();
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * y[i];
                        }
                    });
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] / x[i];
                        }
                    });
                }
                Op::SoftmaxRows(a) => {
                    let n = out.cols();
                    let y = out.data();
                    acc(*a, &mut |s| {
                        for (r, (yr, gr)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                s[r * n + j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let (m, n) = dims(out);
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        acc(p, &mut |s| {
                            for r in 0..m {
                                add_into(&mut s[r * w..(r + 1) * w], &g[r * n + offset..r * n + offset + w]);
                            }
                        });
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        acc(p, &mut |s| add_into(s, &g[offset..offset + len]));
                        offset += len;
                    }
                }
                Op::SliceRows(a, start) => {
                    let n = out.cols();
                    let off = start * n;
                    acc(*a, &mut |s| add_into(&mut s[off..off + g.len()], &g));
                }
                Op::SliceCols(a, start) => {
                    let (m, w) = dims(out);
                    let n = self.value(*a).cols();
                    acc(*a, &mut |s| {
                        for r in 0..m {
                            add_into(&mut s[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w]);
                        }
                    });
                }
                Op::Dropout(a, mask) => acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * mask[i];
                    }
                }),
                Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
                Op::Mean(a) => {
                    let n = self.value(*a).len() as f64;
                    acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0] / n));
                }
                Op::MeanRows(a) => {
                    let (m, n) = dims(self.value(*a));
                    acc(*a, &mut |s| {
                        for chunk in s.chunks_mut(n) {
                            chunk.iter_mut().zip(&g).for_each(|(x, y)| *x += y / m as f64);
                        }
                    });
                }
                Op::Mse(a, target) => {
                    let x = self.value(*a).data();
                    let c = 2.0 * g[0] / target.len() as f64;
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += c * (x[i] - target[i]);
                        }
                    });
                }
                Op::Fused(locals) => {
                    for (v, local) in locals {
                        acc(*v, &mut |s| {
                            s.iter_mut().zip(local).for_each(|(x, l)| *x += g[0] * l)
                        });
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Back-propagates from `output` and adds parameter gradients into `params`.
    pub fn backward(&self, output: Var, params: &mut ParamSet) -> Result<()> {
        let grads = self.gradients(output)?;
        grads.accumulate_into(self, params);
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Per-node gradients of one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to node `v`, if the output depends on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn accumulate_into(&self, tape: &Tape, params: &mut ParamSet) {
        for (node, g) in tape.nodes.iter().zip(&self.grads) {
            let Some(g) = g else { continue };
            match &node.op {
                Op::Param(id) => add_into(params.get_mut(*id).grad_mut(), g),
                Op::Gather { param, ids } => {
                    let pad = params.has_pad_row(*param);
                    let table = params.get_mut(*param);
                    let d = table.cols();
                    let slot = table.grad_mut();
                    for (r, &row) in ids.iter().enumerate() {
                        if pad && row == 0 {
                            continue;
                        }
                        add_into(&mut slot[row * d..(row + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
                _ => {}
            }
        }
    }
}
