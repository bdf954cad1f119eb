use super::objective::{framed, joint_gradients, GumbelNoise};
use super::optim::{clip_global_norm, Adam, Schedule};
use super::TrainError;
use crate::autograd::Tape;
use crate::corpus::{make_noisy, NoiseConfig, Style, StyledCorpus, TokenSeq, Tokenizer};
use crate::losses::LossWeights;
use crate::net::{Dropout, LmParams, ModelParams, ParamSet};
use crate::tensor::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub clip: f64,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr: 1e-3,
            warmup: 100,
            clip: 1.0,
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub clip: f64,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            lr: 5e-3,
            warmup: 100,
            clip: 1.0,
            seed: 0,
        }
    }
}

pub(crate) fn apply_update(
    opt: &mut Adam,
    set: &mut ParamSet,
    mut grads: Vec<Mat>,
    sched: &Schedule,
    step: usize,
    clip: f64,
) {
    clip_global_norm(&mut grads, clip);
    opt.update(set, &grads, sched.lr(step));
}

// Per-sentence noise seed, distinct across steps and batch positions.
fn noise_seed(base: u64, step: usize, i: usize) -> u64 {
    base ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (i as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// Denoising pretraining: reconstruct each clean sentence from its noised
/// copy. Returns the per-step training loss.
pub fn pretrain_dae(params: &mut ModelParams, corpus: &[TokenSeq], cfg: &DaeConfig) -> Result<Vec<f64>, TrainError> {
    cfg.noise.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::Empty("pretraining corpus"));
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
    }
    let sched = Schedule {
        base_lr: cfg.lr,
        warmup: cfg.warmup,
    };
    let mut opt = Adam::new(&params.set);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop = Dropout::new(params.cfg.dropout, cfg.seed ^ 0x64726f70);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch: Vec<(TokenSeq, TokenSeq)> = (0..cfg.batch_size)
            .map(|i| {
                let clean = &corpus[rng.random_range(0..corpus.len())];
                let noisy = make_noisy(clean, &cfg.noise.with_seed(noise_seed(cfg.noise.seed, step, i)));
                (noisy, clean.clone())
            })
            .collect();
        let g = joint_gradients(
            params,
            None,
            &batch,
            &[],
            &LossWeights::default(),
            false,
            &GumbelNoise::Zero,
            &mut drop,
            &mut Dropout::none(),
        )?;
        curve.push(g.breakdown.l_sup);
        apply_update(&mut opt, &mut params.set, g.grads, &sched, step, cfg.clip);
    }
    Ok(curve)
}

fn check_og(corpus: &StyledCorpus) -> Result<(), TrainError> {
    if corpus.style != Style::Og {
        return Err(TrainError::WrongStyle {
            expected: Style::Og,
            found: corpus.style,
        });
    }
    if corpus.is_empty() {
        return Err(TrainError::Empty("language-model corpus"));
    }
    Ok(())
}

fn lm_steps(lm: &mut LmParams, seqs: &[TokenSeq], cfg: &LmTrainConfig, lr: f64) -> Result<Vec<f64>, TrainError> {
    let sched = Schedule {
        base_lr: lr,
        warmup: cfg.warmup,
    };
    let mut opt = Adam::new(&lm.set);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop = Dropout::new(lm.cfg.dropout, cfg.seed ^ 0x6c6d);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let mut grads = lm.set.zeros_like();
        let mut total = 0.0;
        for _ in 0..cfg.batch_size {
            let ids = framed(&seqs[rng.random_range(0..seqs.len())], lm.cfg.max_len);
            let mut t = Tape::new();
            let p = lm.bind(&mut t, true);
            let logp = lm.token_logprobs(&mut t, &p, &ids, &mut drop)?;
            let nll = t.nll(logp, &ids);
            let loss = t.scale(nll, 1.0 / (ids.len() * cfg.batch_size) as f64);
            total += t.value(loss).item();
            super::optim::accumulate(&mut grads, &t.backward(loss), &p);
        }
        curve.push(total);
        apply_update(&mut opt, &mut lm.set, grads, &sched, step, cfg.clip);
    }
    Ok(curve)
}

/// Next-token training on an OG corpus. Returns the per-step loss.
pub fn train_lm(
    lm: &mut LmParams,
    og_train: &StyledCorpus,
    tok: &Tokenizer,
    cfg: &LmTrainConfig,
) -> Result<Vec<f64>, TrainError> {
    check_og(og_train)?;
    if cfg.batch_size == 0 {
        return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
    }
    let seqs = og_train.encode_all(tok);
    lm_steps(lm, &seqs, cfg, cfg.lr)
}

/// Continues training at a tenth of the configured rate.
pub fn finetune_lm(
    lm: &mut LmParams,
    og_style_train: &StyledCorpus,
    tok: &Tokenizer,
    cfg: &LmTrainConfig,
) -> Result<Vec<f64>, TrainError> {
    check_og(og_style_train)?;
    if cfg.batch_size == 0 {
        return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
    }
    let seqs = og_style_train.encode_all(tok);
    lm_steps(lm, &seqs, cfg, cfg.lr / 10.0)
}
