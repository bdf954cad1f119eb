//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records eagerly evaluated operations. Leaves either own a
//! value (inputs, constants) or borrow one (model parameters), so binding a
//! parameter set costs nothing. Nodes whose inputs never require a gradient
//! are skipped during the backward sweep, which makes the same forward code
//! usable for inference.

use crate::tensor::{gemm, log_softmax_in_place, softmax_in_place, Mat};
use rand::Rng;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Val<'p> {
    Owned(Mat),
    Borrowed(&'p Mat),
}

impl Val<'_> {
    fn get(&self) -> &Mat {
        match self {
            Val::Owned(m) => m,
            Val::Borrowed(m) => m,
        }
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Linear(Var, Var, Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Mat>,
    },
    Gather(Var, Vec<usize>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    SumAll(Var),
    MeanRows(Var),
    SumRows(Var),
    Cosine(Var, Var),
    Square(Var),
    Nll(Var, Vec<usize>),
    Dropout(Var, Vec<f64>),
}

struct Node<'p> {
    value: Val<'p>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients produced by [`Tape::backward`], one slot per tape node.
pub struct Grads {
    slots: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.slots[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.slots[v.0].take()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.nodes[v.0].value.get()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Val::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Owned leaf that receives a gradient.
    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Borrowed leaf, typically a model parameter.
    pub fn borrow(&mut self, m: &'p Mat, trainable: bool) -> Var {
        self.nodes.push(Node {
            value: Val::Borrowed(m),
            op: Op::Leaf,
            needs_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let g = self.any_grad(&[a, b]);
        self.push(out, Op::Add(a, b), g)
    }

    /// `x + 1 * bias` where `bias` is a single row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1);
        let mut out = self.value(x).clone();
        assert_eq!(out.cols(), b.cols());
        let b = b.row(0).to_vec();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let g = self.any_grad(&[x, bias]);
        self.push(out, Op::AddRow(x, bias), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Mat::from_vec(va.rows(), va.cols(), data);
        let g = self.any_grad(&[a, b]);
        self.push(out, Op::Mul(a, b), g)
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = scale * *v + shift);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Affine(x, scale), g)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(va.rows(), vb.cols());
        gemm(1.0, va, false, vb, false, 0.0, &mut out);
        let g = self.any_grad(&[a, b]);
        self.push(out, Op::MatMul(a, b), g)
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(va.rows(), vb.rows());
        gemm(1.0, va, false, vb, true, 0.0, &mut out);
        let g = self.any_grad(&[a, b]);
        self.push(out, Op::MatMulNt(a, b), g)
    }

    /// `x * w + b` with `b` a single row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let mut out = Mat::zeros(vx.rows(), vw.cols());
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(vb.row(0));
        }
        gemm(1.0, vx, false, vw, false, 1.0, &mut out);
        let g = self.any_grad(&[x, w, b]);
        self.push(out, Op::Linear(x, w, b), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let g = self.any_grad(&[x]);
        self.push(out, Op::Relu(x), g)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let vx = self.value(x);
        let (rows, cols) = vx.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
            rstd.push(rs);
        }
        let (g, b) = (self.value(gamma).row(0), self.value(beta).row(0));
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gv + bv;
            }
        }
        let ng = self.any_grad(&[x, gamma, beta]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let g = self.any_grad(&[x]);
        self.push(out, Op::Softmax(x), g)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            log_softmax_in_place(out.row_mut(r));
        }
        let g = self.any_grad(&[x]);
        self.push(out, Op::LogSoftmax(x), g)
    }

    /// Elementwise `ln(max(x, floor))`; the floor blocks the gradient.
    pub fn log_floored(&mut self, x: Var, floor: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(floor).ln());
        let g = self.any_grad(&[x]);
        self.push(out, Op::Log(x), g)
    }

    /// Multi-head scaled dot-product attention. `q` is `n x d`, `k` and `v`
    /// are `m x d`; with `causal`, query `i` only sees keys `0..=i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Var {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = vq.shape();
        let m = vk.rows();
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = vq.cols_slice(h * dh, dh);
            let kh = vk.cols_slice(h * dh, dh);
            let vh = vv.cols_slice(h * dh, dh);
            let mut s = Mat::zeros(n, m);
            gemm(scale, &qh, false, &kh, true, 0.0, &mut s);
            for i in 0..n {
                let row = s.row_mut(i);
                if causal {
                    row.iter_mut().skip(i + 1).for_each(|x| *x = f64::NEG_INFINITY);
                }
                softmax_in_place(row);
            }
            let mut oh = Mat::zeros(n, dh);
            gemm(1.0, &s, false, &vh, false, 0.0, &mut oh);
            for i in 0..n {
                out.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(oh.row(i));
            }
            probs.push(s);
        }
        let g = self.any_grad(&[q, k, v]);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            g,
        )
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let out = self.value(table).select_rows(ids);
        let g = self.any_grad(&[table]);
        self.push(out, Op::Gather(table, ids.to_vec()), g)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        let ids: Vec<usize> = (start..start + len).collect();
        let out = vx.select_rows(&ids);
        let g = self.any_grad(&[x]);
        self.push(out, Op::SliceRows(x, start), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols);
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let g = self.any_grad(parts);
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let g = self.any_grad(&[x]);
        self.push(Mat::scalar(s), Op::SumAll(x), g)
    }

    /// Column means, `1 x cols`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let mut out = Mat::zeros(1, vx.cols());
        for r in 0..vx.rows() {
            for (o, v) in out.row_mut(0).iter_mut().zip(vx.row(r)) {
                *o += v;
            }
        }
        out.scale_assign(1.0 / vx.rows() as f64);
        let g = self.any_grad(&[x]);
        self.push(out, Op::MeanRows(x), g)
    }

    /// Column sums, `1 x cols`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let mut out = Mat::zeros(1, vx.cols());
        for r in 0..vx.rows() {
            for (o, v) in out.row_mut(0).iter_mut().zip(vx.row(r)) {
                *o += v;
            }
        }
        let g = self.any_grad(&[x]);
        self.push(out, Op::SumRows(x), g)
    }

    /// Cosine similarity of two equally shaped matrices viewed as flat vectors.
    /// A zero-norm operand yields 0 with no gradient.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let c = crate::tensor::cosine(va, vb);
        let g = self.any_grad(&[a, b]);
        self.push(Mat::scalar(c), Op::Cosine(a, b), g)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= *v);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Square(x), g)
    }

    /// `-sum_i logp[i, targets[i]]`
    pub fn nll(&mut self, logp: Var, targets: &[usize]) -> Var {
        let vl = self.value(logp);
        assert_eq!(vl.rows(), targets.len());
        let s: f64 = targets.iter().enumerate().map(|(i, &t)| -vl.get(i, t)).sum();
        let g = self.any_grad(&[logp]);
        self.push(Mat::scalar(s), Op::Nll(logp, targets.to_vec()), g)
    }

    /// Inverted dropout with keep-probability `1 - p`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let vx = self.value(x);
        let mask: Vec<f64> = (0..vx.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = vx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Mat::from_vec(vx.rows(), vx.cols(), data);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Dropout(x, mask), g)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut slots: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        slots[loss.0] = Some(Mat::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = slots[idx].take() else {
                continue;
            };
            self.propagate(node, &gout, &mut slots);
            slots[idx] = Some(gout);
        }
        Grads { slots }
    }

    fn propagate(&self, node: &Node<'p>, g: &Mat, slots: &mut [Option<Mat>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, m: Mat| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut slots[v.0] {
                Some(existing) => existing.add_assign(&m),
                slot @ None => *slot = Some(m),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(x, bias) => {
                acc(*x, g.clone());
                if needs(*bias) {
                    acc(*bias, column_sums(g));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    acc(*a, hadamard(g, vb));
                }
                if needs(*b) {
                    acc(*b, hadamard(g, va));
                }
            }
            Op::Affine(x, s) => {
                let mut d = g.clone();
                d.scale_assign(*s);
                acc(*x, d);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let mut d = Mat::zeros(va.rows(), va.cols());
                    gemm(1.0, g, false, vb, true, 0.0, &mut d);
                    acc(*a, d);
                }
                if needs(*b) {
                    let mut d = Mat::zeros(vb.rows(), vb.cols());
                    gemm(1.0, va, true, g, false, 0.0, &mut d);
                    acc(*b, d);
                }
            }
            Op::MatMulNt(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let mut d = Mat::zeros(va.rows(), va.cols());
                    gemm(1.0, g, false, vb, false, 0.0, &mut d);
                    acc(*a, d);
                }
                if needs(*b) {
                    let mut d = Mat::zeros(vb.rows(), vb.cols());
                    gemm(1.0, g, true, va, false, 0.0, &mut d);
                    acc(*b, d);
                }
            }
            Op::Linear(x, w, b) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                if needs(*x) {
                    let mut d = Mat::zeros(vx.rows(), vx.cols());
                    gemm(1.0, g, false, vw, true, 0.0, &mut d);
                    acc(*x, d);
                }
                if needs(*w) {
                    let mut d = Mat::zeros(vw.rows(), vw.cols());
                    gemm(1.0, vx, true, g, false, 0.0, &mut d);
                    acc(*w, d);
                }
                if needs(*b) {
                    acc(*b, column_sums(g));
                }
            }
            Op::Relu(x) => {
                let vx = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                acc(*x, Mat::from_vec(g.rows(), g.cols(), data));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = self.value(*gamma).row(0);
                let (rows, cols) = g.shape();
                if needs(*x) {
                    let mut dx = Mat::zeros(rows, cols);
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        for (c, d) in dxhat.iter_mut().enumerate() {
                            *d = g.get(r, c) * gam[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                        let xr = xhat.row(r);
                        let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = rstd[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
                        }
                    }
                    acc(*x, dx);
                }
                if needs(*gamma) {
                    acc(*gamma, column_sums(&hadamard(g, xhat)));
                }
                if needs(*beta) {
                    acc(*beta, column_sums(g));
                }
            }
            Op::Softmax(x) => {
                let y = node.value.get();
                let mut dx = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = yr[c] * (gr[c] - s);
                    }
                }
                acc(*x, dx);
            }
            Op::LogSoftmax(x) => {
                let y = node.value.get();
                let mut dx = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s: f64 = gr.iter().sum();
                    for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = gr[c] - yr[c].exp() * s;
                    }
                }
                acc(*x, dx);
            }
            Op::Log(x) => {
                let vx = self.value(*x);
                // Values clamped at the floor pass no gradient.
                let floored = node.value.get();
                let data: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .zip(floored.data())
                    .map(|((gv, xv), lv)| if *xv > 0.0 && xv.ln() == *lv { gv / xv } else { 0.0 })
                    .collect();
                acc(*x, Mat::from_vec(g.rows(), g.cols(), data));
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (vq, vk, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (n, d) = vq.shape();
                let m = vk.rows();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Mat::zeros(n, d);
                let mut dk = Mat::zeros(m, d);
                let mut dv = Mat::zeros(m, d);
                for (h, a) in probs.iter().enumerate() {
                    let qh = vq.cols_slice(h * dh, dh);
                    let kh = vk.cols_slice(h * dh, dh);
                    let vh = vv.cols_slice(h * dh, dh);
                    let goh = g.cols_slice(h * dh, dh);
                    let mut da = Mat::zeros(n, m);
                    gemm(1.0, &goh, false, &vh, true, 0.0, &mut da);
                    let mut dvh = Mat::zeros(m, dh);
                    gemm(1.0, a, true, &goh, false, 0.0, &mut dvh);
                    let mut ds = Mat::zeros(n, m);
                    for i in 0..n {
                        let (ar, dar) = (a.row(i), da.row(i));
                        let s: f64 = ar.iter().zip(dar).map(|(x, y)| x * y).sum();
                        for (j, o) in ds.row_mut(i).iter_mut().enumerate() {
                            *o = ar[j] * (dar[j] - s);
                        }
                    }
                    let mut dqh = Mat::zeros(n, dh);
                    gemm(scale, &ds, false, &kh, false, 0.0, &mut dqh);
                    let mut dkh = Mat::zeros(m, dh);
                    gemm(scale, &ds, true, &qh, false, 0.0, &mut dkh);
                    for i in 0..n {
                        dq.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(dqh.row(i));
                    }
                    for j in 0..m {
                        dk.row_mut(j)[h * dh..(h + 1) * dh].copy_from_slice(dkh.row(j));
                        dv.row_mut(j)[h * dh..(h + 1) * dh].copy_from_slice(dvh.row(j));
                    }
                }
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::Gather(table, ids) => {
                let vt = self.value(*table);
                let mut d = Mat::zeros(vt.rows(), vt.cols());
                for (i, &id) in ids.iter().enumerate() {
                    for (o, gv) in d.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += gv;
                    }
                }
                acc(*table, d);
            }
            Op::SliceRows(x, start) => {
                let vx = self.value(*x);
                let mut d = Mat::zeros(vx.rows(), vx.cols());
                for r in 0..g.rows() {
                    d.row_mut(start + r).copy_from_slice(g.row(r));
                }
                acc(*x, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if needs(p) {
                        let ids: Vec<usize> = (offset..offset + rows).collect();
                        acc(p, g.select_rows(&ids));
                    }
                    offset += rows;
                }
            }
            Op::SumAll(x) => {
                let vx = self.value(*x);
                acc(*x, Mat::filled(vx.rows(), vx.cols(), g.item()));
            }
            Op::MeanRows(x) | Op::SumRows(x) => {
                let vx = self.value(*x);
                let s = if matches!(node.op, Op::MeanRows(_)) {
                    1.0 / vx.rows() as f64
                } else {
                    1.0
                };
                let mut d = Mat::zeros(vx.rows(), vx.cols());
                for r in 0..vx.rows() {
                    for (o, gv) in d.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = gv * s;
                    }
                }
                acc(*x, d);
            }
            Op::Cosine(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (na, nb) = (va.sq_norm().sqrt(), vb.sq_norm().sqrt());
                if na == 0.0 || nb == 0.0 {
                    return;
                }
                let c = node.value.get().item();
                let gs = g.item();
                if needs(*a) {
                    let data = va
                        .data()
                        .iter()
                        .zip(vb.data())
                        .map(|(x, y)| gs * (y / (na * nb) - c * x / (na * na)))
                        .collect();
                    acc(*a, Mat::from_vec(va.rows(), va.cols(), data));
                }
                if needs(*b) {
                    let data = vb
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(y, x)| gs * (x / (na * nb) - c * y / (nb * nb)))
                        .collect();
                    acc(*b, Mat::from_vec(vb.rows(), vb.cols(), data));
                }
            }
            Op::Square(x) => {
                let vx = self.value(*x);
                let data = g.data().iter().zip(vx.data()).map(|(gv, xv)| 2.0 * gv * xv).collect();
                acc(*x, Mat::from_vec(g.rows(), g.cols(), data));
            }
            Op::Nll(logp, targets) => {
                let vl = self.value(*logp);
                let mut d = Mat::zeros(vl.rows(), vl.cols());
                for (i, &t) in targets.iter().enumerate() {
                    d.set(i, t, -g.item());
                }
                acc(*logp, d);
            }
            Op::Dropout(x, mask) => {
                let data = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                acc(*x, Mat::from_vec(g.rows(), g.cols(), data));
            }
        }
    }
}

fn column_sums(m: &Mat) -> Mat {
    let mut out = Mat::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.row_mut(0).iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

fn hadamard(a: &Mat, b: &Mat) -> Mat {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Mat::from_vec(a.rows(), a.cols(), data)
}
