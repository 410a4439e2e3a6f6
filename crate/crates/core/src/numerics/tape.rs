//! Define-by-run reverse-mode autodiff.
//!
//! A [`Tape`] records every operation of one forward pass. It is rebuilt for
//! each batch and confined to the thread that built it.

use std::cell::{Ref, RefCell};

use rand::Rng;

use super::functional::{
    self, attention_forward, gelu, gelu_grad, gemm_nn, gemm_nt, gemm_tn, layer_norm_rows, sigmoid,
    softplus, AttentionShape, Mode,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Scale(Var, F),
    MulConst {
        x: Var,
        factor: Vec<F>,
    },
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Gather {
        x: Var,
        index: Vec<Option<usize>>,
    },
    ConcatRows(Var, Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<F>,
    },
    BceLogits {
        z: Var,
        targets: Vec<F>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Tape<F: Scalar> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn record(&self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs = self.needs(inputs);
        self.push(value, op, needs)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    /// Input node; gradients are collected for it when `requires_grad`.
    pub fn leaf(&self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<F>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v).data()[0]
    }

    fn with2<T>(&self, a: Var, b: Var, f: impl FnOnce(&Tensor<F>, &Tensor<F>) -> T) -> T {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value, &nodes[b.0].value)
    }

    fn with1<T>(&self, a: Var, f: impl FnOnce(&Tensor<F>) -> T) -> T {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value)
    }

    /// `a · b` for matrices `[m×k]·[k×n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with2(a, b, |ta, tb| {
            let (m, k) = (ta.rows(), ta.cols());
            if tb.rows() != k {
                return shape_err(format!("matmul {:?} x {:?}", ta.shape(), tb.shape()));
            }
            let n = tb.cols();
            Tensor::new(&[m, n], gemm_nn(ta.data(), tb.data(), m, k, n))
        })?;
        Ok(self.record(
            value,
            Op::MatMul {
                a,
                b,
                trans_b: false,
            },
            &[a, b],
        ))
    }

    /// `a · bᵀ` for `[m×k]·[n×k]ᵀ`.
    pub fn matmul_bt(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with2(a, b, |ta, tb| {
            let (m, k) = (ta.rows(), ta.cols());
            if tb.cols() != k {
                return shape_err(format!("matmul_bt {:?} x {:?}ᵀ", ta.shape(), tb.shape()));
            }
            let n = tb.rows();
            Tensor::new(&[m, n], gemm_nt(ta.data(), tb.data(), m, k, n))
        })?;
        Ok(self.record(
            value,
            Op::MatMul {
                a,
                b,
                trans_b: true,
            },
            &[a, b],
        ))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with2(a, b, |ta, tb| {
            if ta.shape() != tb.shape() {
                return shape_err(format!("add {:?} + {:?}", ta.shape(), tb.shape()));
            }
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| x + y)
                .collect();
            Tensor::new(ta.shape(), data)
        })?;
        Ok(self.record(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds a `[n]` bias to every row of `x`.
    pub fn add_row(&self, x: Var, bias: Var) -> Result<Var> {
        let value = self.with2(x, bias, |tx, tb| {
            let c = tx.cols();
            if tb.len() != c {
                return shape_err(format!("add_row {:?} + {:?}", tx.shape(), tb.shape()));
            }
            let mut data = tx.data().to_vec();
            for row in data.chunks_mut(c.max(1)) {
                for (v, &b) in row.iter_mut().zip(tb.data()) {
                    *v = *v + b;
                }
            }
            Tensor::new(tx.shape(), data)
        })?;
        Ok(self.record(value, Op::AddRow { x, bias }, &[x, bias]))
    }

    /// `x·W + b`.
    pub fn linear(&self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, weight)?;
        self.add_row(xw, bias)
    }

    pub fn scale(&self, x: Var, c: F) -> Var {
        let value = self.with1(x, |t| {
            Tensor::new(t.shape(), t.data().iter().map(|&v| v * c).collect()).unwrap()
        });
        self.record(value, Op::Scale(x, c), &[x])
    }

    /// Element-wise product with a constant multiplier of the same length.
    pub fn mul_const(&self, x: Var, factor: Vec<F>) -> Result<Var> {
        let value = self.with1(x, |t| {
            if t.len() != factor.len() {
                return shape_err(format!("mul_const {:?} by {}", t.shape(), factor.len()));
            }
            Tensor::new(
                t.shape(),
                t.data().iter().zip(&factor).map(|(&v, &f)| v * f).collect(),
            )
        })?;
        Ok(self.record(value, Op::MulConst { x, factor }, &[x]))
    }

    /// Inverted dropout; identity in eval mode or at rate zero.
    pub fn dropout(&self, x: Var, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        functional::check_rate(rate)?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let len = self.value(x).len();
        let mask = functional::dropout_mask(len, rate, rng)?;
        self.mul_const(x, mask)
    }

    fn unary(&self, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let value = self.with1(x, |t| {
            Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).unwrap()
        });
        self.record(value, op, &[x])
    }

    pub fn gelu(&self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| v.max(F::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Layer normalization over the last dimension.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let (value, xhat, rstd) = {
            let nodes = self.nodes.borrow();
            let (tx, tg, tb) = (
                &nodes[x.0].value,
                &nodes[gain.0].value,
                &nodes[bias.0].value,
            );
            let d = tx.cols();
            if d == 0 || tg.len() != d || tb.len() != d {
                return shape_err(format!(
                    "layer_norm {:?} with gain {:?} bias {:?}",
                    tx.shape(),
                    tg.shape(),
                    tb.shape()
                ));
            }
            let (y, xhat, rstd) = layer_norm_rows(tx.data(), d, tg.data(), tb.data(), eps);
            (Tensor::new(tx.shape(), y)?, xhat, rstd)
        };
        Ok(self.record(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Selects rows of `x`; `None` yields a zero row that carries no gradient.
    pub fn gather(&self, x: Var, index: Vec<Option<usize>>) -> Result<Var> {
        let value = self.with1(x, |t| {
            let (rows, c) = (t.rows(), t.cols());
            let mut data = Vec::with_capacity(index.len() * c);
            for &i in &index {
                match i {
                    Some(i) if i < rows => data.extend_from_slice(t.row(i)),
                    Some(i) => return shape_err(format!("gather row {i} of {rows}")),
                    None => data.extend(std::iter::repeat_n(F::zero(), c)),
                }
            }
            Tensor::new(&[index.len(), c], data)
        })?;
        Ok(self.record(value, Op::Gather { x, index }, &[x]))
    }

    /// Stacks `b` below `a`.
    pub fn concat_rows(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with2(a, b, |ta, tb| {
            if ta.cols() != tb.cols() {
                return shape_err(format!("concat_rows {:?} / {:?}", ta.shape(), tb.shape()));
            }
            let mut data = ta.data().to_vec();
            data.extend_from_slice(tb.data());
            Tensor::new(&[ta.rows() + tb.rows(), ta.cols()], data)
        })?;
        Ok(self.record(value, Op::ConcatRows(a, b), &[a, b]))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.with1(x, |t| {
            if start > end || end > t.rows() {
                return shape_err(format!("slice_rows {start}..{end} of {:?}", t.shape()));
            }
            let c = t.cols();
            Tensor::new(&[end - start, c], t.data()[start * c..end * c].to_vec())
        })?;
        Ok(self.record(value, Op::SliceRows { x, start }, &[x]))
    }

    pub fn softmax(&self, x: Var) -> Var {
        let value = self.with1(x, functional::softmax_rows);
        self.record(value, Op::Softmax(x), &[x])
    }

    /// Multi-head scaled dot-product self-attention with key masking.
    pub fn attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        keep: &[bool],
    ) -> Result<Var> {
        let (value, probs) = {
            let nodes = self.nodes.borrow();
            let (tq, tk, tv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
            let width = tq.cols();
            let rows = shape.batch * shape.seq;
            if tq.shape() != tk.shape()
                || tq.shape() != tv.shape()
                || tq.rows() != rows
                || keep.len() != rows
                || shape.heads == 0
                || width % shape.heads != 0
            {
                return shape_err(format!(
                    "attention q{:?} k{:?} v{:?} with {shape:?} and {} mask entries",
                    tq.shape(),
                    tk.shape(),
                    tv.shape(),
                    keep.len()
                ));
            }
            let (out, probs) =
                attention_forward(tq.data(), tk.data(), tv.data(), width, shape, keep);
            (Tensor::new(&[rows, width], out)?, probs)
        };
        Ok(self.record(
            value,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(z)` against soft `targets`.
    pub fn bce_with_logits(&self, z: Var, targets: Vec<F>) -> Result<Var> {
        let value = self.with1(z, |t| {
            if t.len() != targets.len() || t.is_empty() {
                return shape_err(format!(
                    "bce logits {:?} vs {} targets",
                    t.shape(),
                    targets.len()
                ));
            }
            let total: F = t
                .data()
                .iter()
                .zip(&targets)
                .map(|(&x, &y)| softplus(x) - y * x)
                .sum();
            Ok(Tensor::scalar(total / F::of(t.len() as f64)))
        })?;
        Ok(self.record(value, Op::BceLogits { z, targets }, &[z]))
    }

    pub fn sum(&self, x: Var) -> Var {
        let value = self.with1(x, |t| Tensor::scalar(t.sum()));
        self.record(value, Op::Sum(x), &[x])
    }

    pub fn mean(&self, x: Var) -> Var {
        let value = self.with1(x, |t| Tensor::scalar(t.sum() / F::of(t.len() as f64)));
        self.record(value, Op::Mean(x), &[x])
    }

    /// Reverse pass seeded with ones at `output`.
    pub fn backward(&self, output: Var) -> Gradients<F> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<F>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[output.0] = Some(vec![F::one(); nodes[output.0].value.len()]);

        fn acc<F: Scalar>(grads: &mut [Option<Vec<F>>], nodes: &[Node<F>], v: Var, delta: Vec<F>) {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a = *a + b),
                slot @ None => *slot = Some(delta),
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul { a, b, trans_b } => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k) = (ta.rows(), ta.cols());
                    if *trans_b {
                        let n = tb.rows();
                        if nodes[a.0].needs_grad {
                            acc(&mut grads, &nodes, *a, gemm_nn(&g, tb.data(), m, n, k));
                        }
                        if nodes[b.0].needs_grad {
                            acc(&mut grads, &nodes, *b, gemm_tn(&g, ta.data(), m, n, k));
                        }
                    } else {
                        let n = tb.cols();
                        if nodes[a.0].needs_grad {
                            acc(&mut grads, &nodes, *a, gemm_nt(&g, tb.data(), m, n, k));
                        }
                        if nodes[b.0].needs_grad {
                            acc(&mut grads, &nodes, *b, gemm_tn(ta.data(), &g, m, k, n));
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *b, g.clone());
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::AddRow { x, bias } => {
                    let c = val(*bias).len();
                    let mut db = vec![F::zero(); c];
                    for row in g.chunks(c.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, &r)| *d = *d + r);
                    }
                    acc(&mut grads, &nodes, *bias, db);
                    acc(&mut grads, &nodes, *x, g);
                }
                Op::Scale(x, c) => {
                    acc(&mut grads, &nodes, *x, g.iter().map(|&v| v * *c).collect());
                }
                Op::MulConst { x, factor } => {
                    acc(
                        &mut grads,
                        &nodes,
                        *x,
                        g.iter().zip(factor).map(|(&v, &f)| v * f).collect(),
                    );
                }
                Op::Gelu(x) => {
                    let d = g
                        .iter()
                        .zip(val(*x).data())
                        .map(|(&gv, &xv)| gv * gelu_grad(xv))
                        .collect();
                    acc(&mut grads, &nodes, *x, d);
                }
                Op::Relu(x) => {
                    let d = g
                        .iter()
                        .zip(val(*x).data())
                        .map(|(&gv, &xv)| if xv > F::zero() { gv } else { F::zero() })
                        .collect();
                    acc(&mut grads, &nodes, *x, d);
                }
                Op::Sigmoid(x) => {
                    let d = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&gv, &y)| gv * y * (F::one() - y))
                        .collect();
                    acc(&mut grads, &nodes, *x, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let tg = val(*gain);
                    let d = tg.len();
                    let inv_d = F::one() / F::of(d as f64);
                    let mut dgain = vec![F::zero(); d];
                    let mut dbias = vec![F::zero(); d];
                    let mut dx = vec![F::zero(); g.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = F::zero();
                        let mut mean_dh_h = F::zero();
                        for c in 0..d {
                            let dh = gr[c] * tg.data()[c];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * hr[c];
                            dgain[c] = dgain[c] + gr[c] * hr[c];
                            dbias[c] = dbias[c] + gr[c];
                        }
                        mean_dh = mean_dh * inv_d;
                        mean_dh_h = mean_dh_h * inv_d;
                        for c in 0..d {
                            let dh = gr[c] * tg.data()[c];
                            dx[r * d + c] = rs * (dh - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                    acc(&mut grads, &nodes, *gain, dgain);
                    acc(&mut grads, &nodes, *bias, dbias);
                    acc(&mut grads, &nodes, *x, dx);
                }
                Op::Gather { x, index } => {
                    if nodes[x.0].needs_grad {
                        let tx = val(*x);
                        let c = tx.cols();
                        let mut dx = vec![F::zero(); tx.len()];
                        for (r, i) in index.iter().enumerate() {
                            if let Some(i) = i {
                                for (d, &gv) in dx[i * c..(i + 1) * c]
                                    .iter_mut()
                                    .zip(&g[r * c..(r + 1) * c])
                                {
                                    *d = *d + gv;
                                }
                            }
                        }
                        acc(&mut grads, &nodes, *x, dx);
                    }
                }
                Op::ConcatRows(a, b) => {
                    let split = val(*a).len();
                    acc(&mut grads, &nodes, *b, g[split..].to_vec());
                    acc(&mut grads, &nodes, *a, g[..split].to_vec());
                }
                Op::SliceRows { x, start } => {
                    if nodes[x.0].needs_grad {
                        let tx = val(*x);
                        let c = tx.cols();
                        let mut dx = vec![F::zero(); tx.len()];
                        dx[start * c..start * c + g.len()].copy_from_slice(&g);
                        acc(&mut grads, &nodes, *x, dx);
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let c = node.value.cols().max(1);
                    let mut dx = vec![F::zero(); y.len()];
                    for ((dr, yr), gr) in dx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let s: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - s);
                        }
                    }
                    acc(&mut grads, &nodes, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    shape,
                    probs,
                } => {
                    let (dq, dk, dv) = attention_backward(
                        val(*q).data(),
                        val(*k).data(),
                        val(*v).data(),
                        probs,
                        &g,
                        val(*q).cols(),
                        *shape,
                    );
                    acc(&mut grads, &nodes, *q, dq);
                    acc(&mut grads, &nodes, *k, dk);
                    acc(&mut grads, &nodes, *v, dv);
                }
                Op::BceLogits { z, targets } => {
                    let tz = val(*z);
                    let scale = g[0] / F::of(tz.len() as f64);
                    let d = tz
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&x, &y)| (sigmoid(x) - y) * scale)
                        .collect();
                    acc(&mut grads, &nodes, *z, d);
                }
                Op::Sum(x) => {
                    acc(&mut grads, &nodes, *x, vec![g[0]; val(*x).len()]);
                }
                Op::Mean(x) => {
                    let n = val(*x).len();
                    acc(&mut grads, &nodes, *x, vec![g[0] / F::of(n as f64); n]);
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| match (&n.op, g) {
                (Op::Leaf, Some(g)) => Some(Tensor::new(n.value.shape(), g).expect("grad shape")),
                _ => None,
            })
            .collect();
        Gradients { grads }
    }
}

#[allow(clippy::type_complexity)]
fn attention_backward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    g: &[F],
    width: usize,
    shape: AttentionShape,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let AttentionShape { batch, seq, heads } = shape;
    let dh = width / heads;
    let scale = F::one() / F::of(dh as f64).sqrt();
    let mut dq = vec![F::zero(); q.len()];
    let mut dk = vec![F::zero(); k.len()];
    let mut dv = vec![F::zero(); v.len()];
    let mut dp = vec![F::zero(); seq];
    for b in 0..batch {
        let base = b * seq;
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..seq {
                let p = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                let gi = &g[(base + i) * width..][cols.clone()];
                let mut s = F::zero();
                for j in 0..seq {
                    if p[j] == F::zero() {
                        dp[j] = F::zero();
                        continue;
                    }
                    let vj = &v[(base + j) * width..][cols.clone()];
                    dp[j] = functional::dot(gi, vj);
                    s = s + p[j] * dp[j];
                    for (d, &gv) in dv[(base + j) * width..][cols.clone()].iter_mut().zip(gi) {
                        *d = *d + p[j] * gv;
                    }
                }
                for j in 0..seq {
                    if p[j] == F::zero() {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - s) * scale;
                    let qi_off = (base + i) * width + h * dh;
                    let kj_off = (base + j) * width + h * dh;
                    for c in 0..dh {
                        dq[qi_off + c] = dq[qi_off + c] + ds * k[kj_off + c];
                        dk[kj_off + c] = dk[kj_off + c] + ds * q[qi_off + c];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Gradients of leaf nodes after [`Tape::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// `None` when `v` is not a gradient-requiring leaf or received no signal.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.param(t(&[1, 1], &[2.0]));
        let y = tape.matmul(x, x).unwrap();
        let g = tape.backward(y);
        assert_eq!(g.get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2], &[3.0, 4.0]));
        let s = tape.add(x, c).unwrap();
        let y = tape.sum(s);
        let g = tape.backward(y);
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, -2.0, 0.5, 100.0, 100.0, -100.0]));
        let y = tape.softmax(x);
        for row in tape.value(y).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn gather_pads_with_zero_rows() {
        let tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.gather(x, vec![Some(1), None, Some(1)]).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0, 0.0, 0.0, 3.0, 4.0]);
        let s = tape.sum(y);
        let g = tape.backward(s);
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 2.0, 2.0]);
        assert!(tape.gather(x, vec![Some(2)]).is_err());
    }

    #[test]
    fn shape_errors() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(tape.matmul(a, b).is_err());
        assert!(tape.matmul_bt(a, b).is_ok());
        let bias = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.add_row(a, bias).is_err());
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 9.0, 9.0]));
        let shape = AttentionShape {
            batch: 1,
            seq: 3,
            heads: 1,
        };
        let y = tape
            .attention(x, x, x, shape, &[true, true, false])
            .unwrap();
        let out = tape.value(y).clone();
        // Rows 0 and 1 mix only rows 0 and 1 of v.
        for r in 0..2 {
            assert!(out.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
