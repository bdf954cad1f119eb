use super::{CorpusError, TokenSeq, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Denoising-autoencoder corruption: token deletion, masking and bounded
/// local shuffling.
///
/// The default probabilities are placeholders; upstream BART-style setups
/// do not pin them for this task, so tune them per corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub mask_prob: f64,
    pub delete_prob: f64,
    pub window: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mask_prob: 0.35,
            delete_prob: 0.0,
            window: 3,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, p) in [("mask_prob", self.mask_prob), ("delete_prob", self.delete_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::InvalidNoise(format!("{name}={p} outside [0,1]")));
            }
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Applies noise in a single pass. For each token in order one uniform draw
/// decides deletion; a surviving token then takes a second draw for
/// masking. Finally each survivor gets the sort key `position + u`,
/// `u ~ U[0, window + 1)`, so no token moves more than `window` places.
pub fn make_noisy(seq: &TokenSeq, cfg: &NoiseConfig) -> TokenSeq {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut kept = Vec::with_capacity(seq.len());
    for &id in seq.iter() {
        if rng.random::<f64>() < cfg.delete_prob {
            continue;
        }
        if rng.random::<f64>() < cfg.mask_prob {
            kept.push(Vocabulary::MASK_ID);
        } else {
            kept.push(id);
        }
    }
    if cfg.window == 0 {
        return TokenSeq(kept);
    }
    let span = (cfg.window + 1) as f64;
    let mut keyed: Vec<(f64, usize)> = kept
        .into_iter()
        .enumerate()
        .map(|(i, id)| (i as f64 + rng.random::<f64>() * span, id))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    TokenSeq(keyed.into_iter().map(|(_, id)| id).collect())
}
