//! Transformer building blocks shared by the encoder-decoder and the LM.

use super::ParamSet;
use crate::autograd::{Tape, Var};
use crate::tensor::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded inverted dropout; `p == 0` disables it.
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn none() -> Self {
        Self::new(0.0, 0)
    }

    pub fn apply(&mut self, t: &mut Tape<'_>, x: Var) -> Var {
        t.dropout(x, self.p, &mut self.rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LnIds {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIds {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfIds {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::randn(rows, cols, (2.0 / (rows + cols) as f64).sqrt(), rng)
}

pub(crate) fn init_ln(set: &mut ParamSet, prefix: &str, dim: usize) -> LnIds {
    LnIds {
        g: set.push(format!("{prefix}.g"), Mat::filled(1, dim, 1.0)),
        b: set.push(format!("{prefix}.b"), Mat::zeros(1, dim)),
    }
}

pub(crate) fn init_attn<R: Rng>(set: &mut ParamSet, prefix: &str, dim: usize, rng: &mut R) -> AttnIds {
    let mut lin = |name: &str, rng: &mut R| {
        let w = set.push(format!("{prefix}.w{name}"), xavier(dim, dim, rng));
        let b = set.push(format!("{prefix}.b{name}"), Mat::zeros(1, dim));
        (w, b)
    };
    let (wq, bq) = lin("q", rng);
    let (wk, bk) = lin("k", rng);
    let (wv, bv) = lin("v", rng);
    let (wo, bo) = lin("o", rng);
    AttnIds {
        wq,
        bq,
        wk,
        bk,
        wv,
        bv,
        wo,
        bo,
    }
}

pub(crate) fn init_ff<R: Rng>(set: &mut ParamSet, prefix: &str, dim: usize, ff: usize, rng: &mut R) -> FfIds {
    FfIds {
        w1: set.push(format!("{prefix}.w1"), xavier(dim, ff, rng)),
        b1: set.push(format!("{prefix}.b1"), Mat::zeros(1, ff)),
        w2: set.push(format!("{prefix}.w2"), xavier(ff, dim, rng)),
        b2: set.push(format!("{prefix}.b2"), Mat::zeros(1, dim)),
    }
}

pub(crate) fn layer_norm(t: &mut Tape<'_>, p: &[Var], ids: LnIds, x: Var) -> Var {
    t.layer_norm(x, p[ids.g], p[ids.b])
}

/// Attention from `x` onto `mem` (`mem == x` for self-attention).
pub(crate) fn attention(
    t: &mut Tape<'_>,
    p: &[Var],
    ids: AttnIds,
    x: Var,
    mem: Var,
    heads: usize,
    causal: bool,
) -> Var {
    let q = t.linear(x, p[ids.wq], p[ids.bq]);
    let k = t.linear(mem, p[ids.wk], p[ids.bk]);
    let v = t.linear(mem, p[ids.wv], p[ids.bv]);
    let a = t.attention(q, k, v, heads, causal);
    t.linear(a, p[ids.wo], p[ids.bo])
}

pub(crate) fn feed_forward(t: &mut Tape<'_>, p: &[Var], ids: FfIds, x: Var, drop: &mut Dropout) -> Var {
    let h = t.linear(x, p[ids.w1], p[ids.b1]);
    let h = t.relu(h);
    let h = drop.apply(t, h);
    t.linear(h, p[ids.w2], p[ids.b2])
}

/// `x + dropout(f(x))`
pub(crate) fn residual(t: &mut Tape<'_>, x: Var, fx: Var, drop: &mut Dropout) -> Var {
    let fx = drop.apply(t, fx);
    t.add(x, fx)
}

/// Scales embeddings by `sqrt(dim)` and adds the position table.
pub(crate) fn embed_positions(t: &mut Tape<'_>, embeds: Var, pos: &Mat, drop: &mut Dropout) -> Var {
    let (n, d) = t.value(embeds).shape();
    let scaled = t.scale(embeds, (d as f64).sqrt());
    let table: Vec<usize> = (0..n).collect();
    let pe = t.constant(pos.select_rows(&table));
    let x = t.add(scaled, pe);
    drop.apply(t, x)
}
