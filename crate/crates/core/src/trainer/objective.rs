use super::optim::accumulate;
use super::TrainError;
use crate::autograd::{Tape, Var};
use crate::corpus::{TokenSeq, Vocabulary};
use crate::evalsuite::content_f1_ids;
use crate::losses::graph::{lm_term, ss_term};
use crate::losses::{LossBreakdown, LossWeights};
use crate::net::{gumbel_softmax_var, greedy_decode, lm_logprob, sample_gumbel, shift_right, DistSeq, Dropout, LmParams, ModelParams};
use crate::tensor::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Source of the Gumbel perturbation in the second decoding pass.
#[derive(Debug, Clone, PartialEq)]
pub enum GumbelNoise {
    Zero,
    /// Fresh draws per sentence, derived from this seed and the position of
    /// the sentence in its batch.
    Seeded(u64),
    /// The leading rows of this matrix are used for every sentence.
    Fixed(Mat),
}

impl GumbelNoise {
    fn draw(&self, index: usize, rows: usize, vocab: usize) -> Result<Mat, TrainError> {
        match self {
            GumbelNoise::Zero => Ok(Mat::zeros(rows, vocab)),
            GumbelNoise::Seeded(seed) => {
                let s = seed.wrapping_add((index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                Ok(sample_gumbel(rows, vocab, &mut ChaCha8Rng::seed_from_u64(s)))
            }
            GumbelNoise::Fixed(m) => {
                if m.rows() < rows || m.cols() != vocab {
                    return Err(TrainError::NoiseShape { have: m.rows(), need: rows });
                }
                Ok(Mat::from_vec(rows, vocab, m.data()[..rows * vocab].to_vec()))
            }
        }
    }
}

/// Longest output the greedy pass may produce for a source of `src_len`.
pub fn decode_cap(params: &ModelParams, src_len: usize) -> usize {
    params.cfg.max_len.min(2 * src_len + 8)
}

/// Sentence ids with `</s>` appended, clipped to the model length.
pub(crate) fn framed(ids: &[usize], max_len: usize) -> Vec<usize> {
    let mut v: Vec<usize> = ids.iter().copied().take(max_len.saturating_sub(1)).collect();
    v.push(Vocabulary::EOS_ID);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPass {
    pub first_pass: TokenSeq,
    pub pi: DistSeq,
}

struct PassTwo {
    first_pass: TokenSeq,
    memory: Var,
    pi: Var,
}

fn pass_two(
    t: &mut Tape<'_>,
    p: &[Var],
    params: &ModelParams,
    src: &[usize],
    tau: f64,
    noise: &Mat,
    first_pass: TokenSeq,
    drop: &mut Dropout,
) -> Result<PassTwo, TrainError> {
    let memory = params.encode_ids(t, p, src, drop)?;
    let dec_in = shift_right(&first_pass);
    let logits = params.decoder_logits(t, p, memory, &dec_in, drop)?;
    let pi = gumbel_softmax_var(t, logits, tau, noise)?;
    Ok(PassTwo { first_pass, memory, pi })
}

/// Greedy first pass without gradients, then a teacher-forced second pass
/// on its shifted output whose logits are relaxed with Gumbel-Softmax.
/// `x_tr` is the raw sentence; `</s>` is appended here.
pub fn two_pass_decode(
    params: &ModelParams,
    x_tr: &TokenSeq,
    w: &LossWeights,
    noise: &GumbelNoise,
) -> Result<TwoPass, TrainError> {
    w.validate()?;
    let src = framed(x_tr, params.cfg.max_len);
    let first = greedy_decode(params, &TokenSeq(src.clone()), decode_cap(params, src.len()))?;
    let g = noise.draw(0, first.len(), params.vocab_size())?;
    let mut t = Tape::new();
    let p = params.bind(&mut t, false);
    let out = pass_two(&mut t, &p, params, &src, w.tau, &g, first, &mut Dropout::none())?;
    Ok(TwoPass {
        pi: DistSeq(t.value(out.pi).clone()),
        first_pass: out.first_pass,
    })
}

/// Accumulated parameter gradients of one training step and the loss
/// values they came from.
#[derive(Debug, Clone)]
pub struct StepGrads {
    pub grads: Vec<Mat>,
    pub breakdown: LossBreakdown,
}

/// Gradient of the combined objective over one supervised batch of
/// `(source, target)` pairs and one unsupervised batch of TR sentences.
/// The supervised term is the per-token cross-entropy averaged over the
/// batch. With `include_unsup` false (or no LM) only that term is used, at
/// full weight. Each sentence gets its own tape; the supervised and
/// unsupervised passes draw dropout masks from separate streams.
pub fn joint_gradients(
    params: &ModelParams,
    lm: Option<&LmParams>,
    sup: &[(TokenSeq, TokenSeq)],
    unsup: &[TokenSeq],
    w: &LossWeights,
    include_unsup: bool,
    noise: &GumbelNoise,
    drop: &mut Dropout,
    unsup_drop: &mut Dropout,
) -> Result<StepGrads, TrainError> {
    w.validate()?;
    let with_unsup = include_unsup && lm.is_some() && !unsup.is_empty();
    if sup.is_empty() && !with_unsup {
        return Err(TrainError::Empty("training batch"));
    }
    let max = params.cfg.max_len;
    let mut grads = params.set.zeros_like();
    let sup_weight = if with_unsup { w.alpha } else { 1.0 };

    let mut l_sup = 0.0;
    for (src, tgt) in sup {
        let src = framed(src, max);
        let tgt = framed(tgt, max);
        let mut t = Tape::new();
        let p = params.bind(&mut t, true);
        let nll = params.seq_nll(&mut t, &p, &src, &tgt, drop)?;
        let per_tok = t.scale(nll, 1.0 / tgt.len() as f64);
        l_sup += t.value(per_tok).item();
        if sup_weight > 0.0 {
            let loss = t.scale(per_tok, sup_weight / sup.len() as f64);
            accumulate(&mut grads, &t.backward(loss), &p);
        }
    }
    if !sup.is_empty() {
        l_sup /= sup.len() as f64;
    }
    if !with_unsup {
        return Ok(StepGrads {
            grads,
            breakdown: LossBreakdown::supervised(l_sup),
        });
    }

    let lm = lm.expect("checked above");
    let (mut l_lm, mut l_ss) = (0.0, 0.0);
    let scale = (1.0 - w.alpha) / unsup.len() as f64;
    for (i, x) in unsup.iter().enumerate() {
        let src = framed(x, max);
        let first = greedy_decode(params, &TokenSeq(src.clone()), decode_cap(params, src.len()))?;
        let g = noise.draw(i, first.len(), params.vocab_size())?;
        let mut t = Tape::new();
        let p = params.bind(&mut t, true);
        let lp = lm.bind(&mut t, false);
        let out = pass_two(&mut t, &p, params, &src, w.tau, &g, first, unsup_drop)?;
        let log_q = lm.soft_logprobs(&mut t, &lp, out.pi, &mut Dropout::none())?;
        let lm_v = lm_term(&mut t, out.pi, log_q);
        let soft = params.embed_soft(&mut t, &p, out.pi);
        let out_states = params.encoder(&mut t, &p, soft, unsup_drop)?;
        let ss_v = ss_term(&mut t, out.memory, out_states);
        l_lm += t.value(lm_v).item();
        l_ss += t.value(ss_v).item();
        let a = t.scale(lm_v, w.beta);
        let b = t.scale(ss_v, w.gamma);
        let s = t.add(a, b);
        if scale > 0.0 && (w.beta > 0.0 || w.gamma > 0.0) {
            let loss = t.scale(s, scale);
            accumulate(&mut grads, &t.backward(loss), &p);
        }
    }
    let n = unsup.len() as f64;
    Ok(StepGrads {
        grads,
        breakdown: LossBreakdown::compose(l_sup, l_lm / n, l_ss / n, w),
    })
}

/// Unsupervised validation result; lower `combined` is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    /// Mean bits per generated token under the OG language model.
    pub entropy_bits: f64,
    /// Mean content F1 between input and output under the frozen reference.
    pub similarity: f64,
    /// `beta * entropy_bits / log2(V) + gamma * (1 - similarity)`
    pub combined: f64,
}

/// Greedy-transfers every validation sentence and scores the outputs for
/// fluency under `lm` and content kept under `reference`.
pub fn validate_unsup(
    params: &ModelParams,
    lm: &LmParams,
    reference: &ModelParams,
    val_tr: &[TokenSeq],
    w: &LossWeights,
) -> Result<ValidationScore, TrainError> {
    if val_tr.is_empty() {
        return Err(TrainError::Empty("validation set"));
    }
    let (mut bits, mut tokens, mut sim) = (0.0, 0usize, 0.0);
    for x in val_tr {
        let src = framed(x, params.cfg.max_len);
        let out = greedy_decode(params, &TokenSeq(src.clone()), decode_cap(params, src.len()))?;
        let lp = lm_logprob(lm, &TokenSeq(out.iter().copied().take(lm.cfg.max_len).collect()))?;
        bits -= lp.iter().sum::<f64>() / std::f64::consts::LN_2;
        tokens += lp.len();
        let text = out.strip_eos(Vocabulary::EOS_ID);
        sim += content_f1_ids(reference, x, &text)?;
    }
    let entropy_bits = bits / tokens as f64;
    let similarity = sim / val_tr.len() as f64;
    let v = params.vocab_size() as f64;
    Ok(ValidationScore {
        entropy_bits,
        similarity,
        combined: w.beta * entropy_bits / v.log2() + w.gamma * (1.0 - similarity),
    })
}

/// Per-token cross-entropy of `target` given `source` over aligned pairs.
pub fn validate_selfsup(params: &ModelParams, pairs: &[(TokenSeq, TokenSeq)]) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::Empty("validation set"));
    }
    let (mut nll, mut n) = (0.0, 0usize);
    for (src, tgt) in pairs {
        let src = framed(src, params.cfg.max_len);
        let tgt = framed(tgt, params.cfg.max_len);
        let mut t = Tape::new();
        let p = params.bind(&mut t, false);
        let v = params.seq_nll(&mut t, &p, &src, &tgt, &mut Dropout::none())?;
        nll += t.value(v).item();
        n += tgt.len();
    }
    Ok(nll / n as f64)
}
