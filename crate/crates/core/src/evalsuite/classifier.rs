use super::EvalError;
use crate::corpus::{Style, StyledCorpus, TokenSeq, Tokenizer};
use crate::net::{encode, ModelParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const HASH_BITS: u32 = 18;
const MAX_EPOCHS: usize = 30;
const LEARNING_RATE: f64 = 0.1;
const L2: f64 = 1e-6;
const TOLERANCE: f64 = 1e-4;

/// Anything that can score a sentence as translationese.
pub trait StylePredictor {
    /// Probability that `text` is TR.
    fn prob_tr(&self, text: &str) -> f64;

    fn predict(&self, text: &str) -> Style {
        if self.prob_tr(text) >= 0.5 {
            Style::Tr
        } else {
            Style::Og
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hashed unigram and bigram counts, sorted by feature index.
pub fn ngram_features(text: &str) -> Vec<(usize, f64)> {
    let lower = text.to_lowercase();
    let mut toks = vec!["<s>"];
    toks.extend(lower.split_whitespace());
    toks.push("</s>");
    let mask = (1usize << HASH_BITS) - 1;
    let mut feats: Vec<usize> = Vec::with_capacity(2 * toks.len());
    for t in &toks[1..toks.len() - 1] {
        feats.push(fnv1a(format!("1:{t}").as_bytes()) as usize & mask);
    }
    for w in toks.windows(2) {
        feats.push(fnv1a(format!("2:{} {}", w[0], w[1]).as_bytes()) as usize & mask);
    }
    feats.sort_unstable();
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(feats.len());
    for f in feats {
        match out.last_mut() {
            Some((g, c)) if *g == f => *c += 1.0,
            _ => out.push((f, 1.0)),
        }
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub examples_per_class: usize,
    pub epochs: usize,
    pub final_loss: f64,
}

// Logistic regression over sparse features by seeded SGD; label 1 is TR.
fn fit_logistic(
    data: &[(Vec<(usize, f64)>, f64)],
    dim: usize,
    seed: u64,
) -> (Vec<f64>, f64, usize, f64) {
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = f64::INFINITY;
    let mut loss = f64::INFINITY;
    let mut epochs = 0;
    for epoch in 0..MAX_EPOCHS {
        epochs = epoch + 1;
        order.shuffle(&mut rng);
        let lr = LEARNING_RATE / (1.0 + epoch as f64).sqrt();
        let mut total = 0.0;
        for &i in &order {
            let (x, y) = &data[i];
            let z = b + x.iter().map(|(f, v)| w[*f] * v).sum::<f64>();
            let p = sigmoid(z);
            total += -(y * p.max(1e-12).ln() + (1.0 - y) * (1.0 - p).max(1e-12).ln());
            let g = p - y;
            for (f, v) in x {
                w[*f] -= lr * (g * v + L2 * w[*f]);
            }
            b -= lr * g;
        }
        loss = total / data.len() as f64;
        if (prev - loss).abs() < TOLERANCE {
            break;
        }
        prev = loss;
    }
    (w, b, epochs, loss)
}

fn balanced<'a>(og: &'a StyledCorpus, tr: &'a StyledCorpus, seed: u64) -> Result<(Vec<&'a str>, Vec<&'a str>), EvalError> {
    if og.is_empty() || tr.is_empty() {
        return Err(EvalError::EmptyClass);
    }
    let n = og.len().min(tr.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |c: &'a StyledCorpus| -> Vec<&'a str> {
        let mut idx: Vec<usize> = (0..c.len()).collect();
        if c.len() > n {
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx.sort_unstable();
        }
        idx.into_iter().map(|i| c.sentences[i].as_str()).collect()
    };
    let a = pick(og);
    let b = pick(tr);
    Ok((a, b))
}

/// Hashed 1-2-gram logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainingMeta,
}

pub fn train_classifier(og: &StyledCorpus, tr: &StyledCorpus, seed: u64) -> Result<StyleClassifier, EvalError> {
    let (a, b) = balanced(og, tr, seed)?;
    let data: Vec<(Vec<(usize, f64)>, f64)> = a
        .iter()
        .map(|s| (ngram_features(s), 0.0))
        .chain(b.iter().map(|s| (ngram_features(s), 1.0)))
        .collect();
    let (weights, bias, epochs, final_loss) = fit_logistic(&data, 1 << HASH_BITS, seed);
    Ok(StyleClassifier {
        weights,
        bias,
        meta: TrainingMeta {
            seed,
            examples_per_class: a.len(),
            epochs,
            final_loss,
        },
    })
}

impl StylePredictor for StyleClassifier {
    fn prob_tr(&self, text: &str) -> f64 {
        let z = self.bias
            + ngram_features(text)
                .iter()
                .map(|(f, v)| self.weights[*f] * v)
                .sum::<f64>();
        sigmoid(z)
    }
}

#[derive(Serialize, Deserialize)]
struct SparseForm {
    dim: usize,
    bias: f64,
    meta: TrainingMeta,
    entries: Vec<(usize, f64)>,
}

impl StyleClassifier {
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let entries = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (i, *w))
            .collect();
        let form = SparseForm {
            dim: self.weights.len(),
            bias: self.bias,
            meta: self.meta.clone(),
            entries,
        };
        std::fs::write(path, serde_json::to_vec(&form)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let form: SparseForm = serde_json::from_slice(&std::fs::read(path)?)?;
        let mut weights = vec![0.0; form.dim];
        for (i, w) in form.entries {
            *weights
                .get_mut(i)
                .ok_or_else(|| EvalError::Invalid(format!("weight index {i} out of range")))? = w;
        }
        Ok(Self {
            weights,
            bias: form.bias,
            meta: form.meta,
        })
    }
}

/// Logistic head over mean-pooled states of a frozen encoder.
#[derive(Debug, Clone)]
pub struct EncoderClassifier<'a> {
    encoder: &'a ModelParams,
    tokenizer: &'a Tokenizer,
    weights: Vec<f64>,
    bias: f64,
}

fn pooled(encoder: &ModelParams, tokenizer: &Tokenizer, text: &str) -> Vec<(usize, f64)> {
    let ids: TokenSeq = tokenizer.encode(text).with_eos(crate::corpus::Vocabulary::EOS_ID);
    let max = encoder.cfg.max_len;
    let ids = TokenSeq(ids.0.into_iter().take(max).collect());
    let states = encode(encoder, &ids).expect("non-empty bounded input");
    (0..states.cols())
        .map(|c| (c, (0..states.rows()).map(|r| states.get(r, c)).sum::<f64>() / states.rows() as f64))
        .collect()
}

impl<'a> EncoderClassifier<'a> {
    pub fn train(
        encoder: &'a ModelParams,
        tokenizer: &'a Tokenizer,
        og: &StyledCorpus,
        tr: &StyledCorpus,
        seed: u64,
    ) -> Result<Self, EvalError> {
        let (a, b) = balanced(og, tr, seed)?;
        let data: Vec<(Vec<(usize, f64)>, f64)> = a
            .iter()
            .map(|s| (pooled(encoder, tokenizer, s), 0.0))
            .chain(b.iter().map(|s| (pooled(encoder, tokenizer, s), 1.0)))
            .collect();
        let (weights, bias, _, _) = fit_logistic(&data, encoder.dim(), seed);
        Ok(Self {
            encoder,
            tokenizer,
            weights,
            bias,
        })
    }
}

impl StylePredictor for EncoderClassifier<'_> {
    fn prob_tr(&self, text: &str) -> f64 {
        let z = self.bias
            + pooled(self.encoder, self.tokenizer, text)
                .iter()
                .map(|(f, v)| self.weights[*f] * v)
                .sum::<f64>();
        sigmoid(z)
    }
}
