//! Training objectives.
//!
//! Each loss exists twice: a plain function over probability tables (used
//! for reporting and as a reference) and a tape version under [`graph`]
//! that the trainer differentiates.
//!
//! Reductions: the supervised cross-entropy sums over target positions and
//! averages over the batch; the LM loss averages over decoding steps; the
//! semantic-similarity loss averages over sentences.

use crate::net::DistSeq;
use crate::tensor::cosine;
use serde::{Deserialize, Serialize};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the supervised term; `1 - alpha` goes to the unsupervised one.
    pub alpha: f64,
    /// LM loss coefficient.
    pub beta: f64,
    /// Semantic-similarity coefficient.
    pub gamma: f64,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 1.0,
            gamma: 1.0,
            tau: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let bad = |m: String| Err(LossError::InvalidWeights(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0,1]", self.alpha));
        }
        if !(self.beta >= 0.0) || !(self.gamma >= 0.0) {
            return bad(format!("beta {} and gamma {} must be >= 0", self.beta, self.gamma));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau {} must be > 0", self.tau));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sup: f64,
    pub l_lm: f64,
    pub l_ss: f64,
    pub l_unsup: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn compose(l_sup: f64, l_lm: f64, l_ss: f64, w: &LossWeights) -> Self {
        let l_unsup = unsup_loss(l_lm, l_ss, w);
        Self {
            l_sup,
            l_lm,
            l_ss,
            l_unsup,
            l_total: joint_loss(l_sup, l_unsup, w),
        }
    }

    /// Only the supervised term is active.
    pub fn supervised(l_sup: f64) -> Self {
        Self {
            l_sup,
            l_total: l_sup,
            ..Default::default()
        }
    }
}

/// `-sum_j log H[j, y_j]` for one sentence.
pub fn sup_loss(pred: &DistSeq, target: &[usize]) -> Result<f64, LossError> {
    if pred.steps() != target.len() {
        return Err(LossError::LengthMismatch(pred.steps(), target.len()));
    }
    Ok(target
        .iter()
        .enumerate()
        .map(|(j, &y)| -pred.step(j)[y].max(PROB_FLOOR).ln())
        .sum())
}

/// Batch mean of [`sup_loss`].
pub fn sup_loss_batch(preds: &[DistSeq], targets: &[&[usize]]) -> Result<f64, LossError> {
    if preds.len() != targets.len() {
        return Err(LossError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        total += sup_loss(p, t)?;
    }
    Ok(total / preds.len() as f64)
}

/// Mean over steps of `-sum_i pi[j,i] log q[j,i]`.
pub fn lm_loss(pi: &DistSeq, q: &DistSeq) -> Result<f64, LossError> {
    if pi.steps() != q.steps() || pi.vocab() != q.vocab() {
        return Err(LossError::LengthMismatch(pi.steps(), q.steps()));
    }
    if pi.steps() == 0 {
        return Err(LossError::EmptyBatch);
    }
    let total: f64 = (0..pi.steps())
        .map(|j| {
            pi.step(j)
                .iter()
                .zip(q.step(j))
                .map(|(p, qv)| -p * qv.max(PROB_FLOOR).ln())
                .sum::<f64>()
        })
        .sum();
    Ok(total / pi.steps() as f64)
}

/// `(1/M) sum (1 - cos(src_m, out_m))^2`. A zero vector counts as cosine 0.
pub fn ss_loss(src: &[Vec<f64>], out: &[Vec<f64>]) -> Result<f64, LossError> {
    if src.len() != out.len() {
        return Err(LossError::LengthMismatch(src.len(), out.len()));
    }
    if src.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let total: f64 = src
        .iter()
        .zip(out)
        .map(|(a, b)| {
            if a.iter().all(|v| *v == 0.0) || b.iter().all(|v| *v == 0.0) {
                log::warn!("zero-norm sentence representation in similarity loss");
            }
            let c = cosine(a, b);
            (1.0 - c) * (1.0 - c)
        })
        .sum();
    Ok(total / src.len() as f64)
}

pub fn unsup_loss(l_lm: f64, l_ss: f64, w: &LossWeights) -> f64 {
    w.beta * l_lm + w.gamma * l_ss
}

pub fn joint_loss(l_sup: f64, l_unsup: f64, w: &LossWeights) -> f64 {
    w.alpha * l_sup + (1.0 - w.alpha) * l_unsup
}

pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| -v * v.ln())
        .sum()
}

/// Differentiable versions of the per-sentence terms.
pub mod graph {
    use crate::autograd::{Tape, Var};

    /// Mean over steps of `-sum(pi * log_q)`; both are `steps x V`.
    pub fn lm_term(t: &mut Tape<'_>, pi: Var, log_q: Var) -> Var {
        let steps = t.value(pi).rows() as f64;
        let prod = t.mul(pi, log_q);
        let s = t.sum_all(prod);
        t.scale(s, -1.0 / steps)
    }

    /// `(1 - cos(mean_rows(src), mean_rows(out)))^2`
    pub fn ss_term(t: &mut Tape<'_>, src_states: Var, out_states: Var) -> Var {
        let a = t.mean_rows(src_states);
        let b = t.mean_rows(out_states);
        let c = t.cosine(a, b);
        let d = t.affine(c, -1.0, 1.0);
        t.square(d)
    }
}
