//! Differentiable core: a small pre-norm transformer encoder-decoder sharing
//! one vocabulary, a decoder-only language model, and the Gumbel-Softmax
//! relaxation that connects them.

mod blocks;
mod gumbel;
mod lm;
mod model;
mod params;

pub use blocks::Dropout;
pub use gumbel::{gumbel_softmax, gumbel_softmax_var, sample_gumbel};
pub use lm::{init_lm, lm_logprob, lm_next_dist, LmParams};
pub use model::{encode, encode_soft, greedy_decode, init_model, ModelParams};
pub(crate) use model::shift_right;
pub use params::{ParamSet, CHECKPOINT_VERSION};

use crate::tensor::Mat;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds the maximum of {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty sequence")]
    Empty,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("checkpoint vocabulary hash {found} does not match {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ff_dim: usize,
    /// Longest sequence (in sub-word units) either side accepts.
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            layers: 2,
            heads: 2,
            dim: 64,
            ff_dim: 128,
            max_len: 64,
            dropout: 0.1,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let fail = |m: String| Err(NetError::InvalidConfig(m));
        if self.vocab_size < 6 {
            return fail(format!("vocab_size {} leaves no room past the specials", self.vocab_size));
        }
        if self.heads == 0 || self.dim == 0 || self.dim % self.heads != 0 {
            return fail(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.ff_dim == 0 {
            return fail("ff_dim must be positive".into());
        }
        if self.max_len < 2 {
            return fail(format!("max_len {} < 2", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0,1)", self.dropout));
        }
        Ok(())
    }
}

/// One probability vector over the vocabulary per step.
#[derive(Debug, Clone, PartialEq)]
pub struct DistSeq(pub Mat);

impl DistSeq {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        Self(Mat::from_rows(rows))
    }

    /// One-hot rows for `ids`.
    pub fn one_hot(ids: &[usize], vocab: usize) -> Self {
        let mut m = Mat::zeros(ids.len(), vocab);
        for (i, &id) in ids.iter().enumerate() {
            m.set(i, id, 1.0);
        }
        Self(m)
    }

    pub fn steps(&self) -> usize {
        self.0.rows()
    }

    pub fn vocab(&self) -> usize {
        self.0.cols()
    }

    pub fn step(&self, j: usize) -> &[f64] {
        self.0.row(j)
    }

    pub fn argmax(&self) -> Vec<usize> {
        (0..self.steps()).map(|j| self.0.argmax_row(j)).collect()
    }

    /// Every row non-negative and summing to one within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        (0..self.steps()).all(|j| {
            let row = self.step(j);
            row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }
}

/// Fixed sinusoidal position table, `max_len x dim`.
pub(crate) fn sinusoid_table(max_len: usize, dim: usize) -> Mat {
    let mut m = Mat::zeros(max_len, dim);
    for pos in 0..max_len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            m.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}
