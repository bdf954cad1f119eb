use super::blocks::{
    attention, embed_positions, feed_forward, init_attn, init_ff, init_ln, layer_norm, residual,
    AttnIds, Dropout, FfIds, LnIds,
};
use super::params::{read_checkpoint, write_checkpoint};
use super::{sinusoid_table, DistSeq, ModelConfig, NetError, ParamSet};
use crate::autograd::{Tape, Var};
use crate::corpus::{TokenSeq, Vocabulary};
use crate::tensor::{log_softmax_in_place, softmax_in_place, Mat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone)]
struct LmLayer {
    ln1: LnIds,
    attn: AttnIds,
    ln2: LnIds,
    ff: FfIds,
}

/// Decoder-only language model. Every input starts with `<s>`, so position
/// `j` of the output predicts token `j` of the sentence.
#[derive(Debug, Clone)]
pub struct LmParams {
    pub cfg: ModelConfig,
    pub set: ParamSet,
    embed: usize,
    layers: Vec<LmLayer>,
    final_ln: LnIds,
    out_bias: usize,
    pos: Mat,
}

pub fn init_lm(cfg: &ModelConfig) -> Result<LmParams, NetError> {
    cfg.validate()?;
    // offset so an LM and a translation model with the same seed differ
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4c4d);
    let mut set = ParamSet::new();
    let d = cfg.dim;
    let embed = set.push(
        "embed",
        Mat::randn(cfg.vocab_size, d, 1.0 / (d as f64).sqrt(), &mut rng),
    );
    let layers = (0..cfg.layers)
        .map(|l| LmLayer {
            ln1: init_ln(&mut set, &format!("lm.{l}.ln1"), d),
            attn: init_attn(&mut set, &format!("lm.{l}.attn"), d, &mut rng),
            ln2: init_ln(&mut set, &format!("lm.{l}.ln2"), d),
            ff: init_ff(&mut set, &format!("lm.{l}.ff"), d, cfg.ff_dim, &mut rng),
        })
        .collect();
    let final_ln = init_ln(&mut set, "lm.ln", d);
    let out_bias = set.push("out.bias", Mat::zeros(1, cfg.vocab_size));
    Ok(LmParams {
        cfg: cfg.clone(),
        set,
        embed,
        layers,
        final_ln,
        out_bias,
        pos: sinusoid_table(cfg.max_len, d),
    })
}

impl LmParams {
    pub fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    /// `(V, dim)` embedding matrix `E_lm`.
    pub fn embedding(&self) -> &Mat {
        self.set.get(self.embed)
    }

    pub fn bind<'p>(&'p self, t: &mut Tape<'p>, trainable: bool) -> Vec<Var> {
        self.set.bind(t, trainable)
    }

    /// Next-token logits for an `n x dim` input embedding sequence.
    pub fn logits(&self, t: &mut Tape<'_>, p: &[Var], embeds: Var, drop: &mut Dropout) -> Result<Var, NetError> {
        let n = t.value(embeds).rows();
        if n == 0 {
            return Err(NetError::Empty);
        }
        if n > self.cfg.max_len {
            return Err(NetError::TooLong {
                len: n,
                max: self.cfg.max_len,
            });
        }
        let mut x = embed_positions(t, embeds, &self.pos, drop);
        for layer in &self.layers {
            let h = layer_norm(t, p, layer.ln1, x);
            let a = attention(t, p, layer.attn, h, h, self.cfg.heads, true);
            x = residual(t, x, a, drop);
            let h = layer_norm(t, p, layer.ln2, x);
            let f = feed_forward(t, p, layer.ff, h, drop);
            x = residual(t, x, f, drop);
        }
        let h = layer_norm(t, p, self.final_ln, x);
        let logits = t.matmul_nt(h, p[self.embed]);
        Ok(t.add_row(logits, p[self.out_bias]))
    }

    /// Log-probabilities (`n x V`) of the next token after `<s> ids[..j]`.
    pub fn token_logprobs(&self, t: &mut Tape<'_>, p: &[Var], ids: &[usize], drop: &mut Dropout) -> Result<Var, NetError> {
        let mut input = Vec::with_capacity(ids.len());
        input.push(Vocabulary::BOS_ID);
        input.extend_from_slice(&ids[..ids.len().saturating_sub(1)]);
        let e = t.gather(p[self.embed], &input);
        let logits = self.logits(t, p, e, drop)?;
        Ok(t.log_softmax(logits))
    }

    /// Log next-token distributions under a soft prefix. Row `j` of the
    /// result conditions on `<s>` followed by the expected embeddings
    /// `E_lm pi_0 .. E_lm pi_{j-1}`; `dist` is `steps x V` and the last step
    /// is not fed in.
    pub fn soft_logprobs(&self, t: &mut Tape<'_>, p: &[Var], dist: Var, drop: &mut Dropout) -> Result<Var, NetError> {
        let (steps, v) = t.value(dist).shape();
        let mut bos = Mat::zeros(1, v);
        bos.set(0, Vocabulary::BOS_ID, 1.0);
        let bos = t.constant(bos);
        let input = if steps > 1 {
            let prefix = t.slice_rows(dist, 0, steps - 1);
            t.concat_rows(&[bos, prefix])
        } else {
            bos
        };
        let e = t.matmul(input, p[self.embed]);
        let logits = self.logits(t, p, e, drop)?;
        Ok(t.log_softmax(logits))
    }

    pub fn save(&self, path: &Path, vocab_hash: &str) -> Result<(), NetError> {
        write_checkpoint(path, "lm", &self.cfg, vocab_hash, &self.set)
    }

    pub fn load(path: &Path, vocab_hash: &str) -> Result<Self, NetError> {
        let (cfg, set): (ModelConfig, ParamSet) = read_checkpoint(path, "lm", vocab_hash)?;
        let fresh = init_lm(&cfg)?;
        if fresh.set.names() != set.names() {
            return Err(NetError::BadCheckpoint("tensor layout differs from config".into()));
        }
        Ok(Self { set, ..fresh })
    }
}

/// Distribution `q_{j+1}` over the token following the soft prefix
/// `pi_1..pi_j` (each row of `prefix` is one `pi`).
pub fn lm_next_dist(lm: &LmParams, prefix: &DistSeq) -> Result<Vec<f64>, NetError> {
    if prefix.steps() == 0 {
        return Err(NetError::Empty);
    }
    let mut t = Tape::new();
    let p = lm.bind(&mut t, false);
    let mut bos = Mat::zeros(1, prefix.vocab());
    bos.set(0, Vocabulary::BOS_ID, 1.0);
    let bos = t.constant(bos);
    let pis = t.constant(prefix.0.clone());
    let input = t.concat_rows(&[bos, pis]);
    let e = t.matmul(input, p[lm.embed]);
    let logits = lm.logits(&mut t, &p, e, &mut Dropout::none())?;
    let last = t.value(logits).rows() - 1;
    let mut q = t.value(logits).row(last).to_vec();
    softmax_in_place(&mut q);
    Ok(q)
}

/// `log P(token_j | <s>, tokens_<j)` for every position, teacher-forced.
pub fn lm_logprob(lm: &LmParams, tokens: &TokenSeq) -> Result<Vec<f64>, NetError> {
    if tokens.is_empty() {
        return Err(NetError::Empty);
    }
    let mut t = Tape::new();
    let p = lm.bind(&mut t, false);
    let mut input = vec![Vocabulary::BOS_ID];
    input.extend_from_slice(&tokens[..tokens.len() - 1]);
    let e = t.gather(p[lm.embed], &input);
    let logits = lm.logits(&mut t, &p, e, &mut Dropout::none())?;
    let lv = t.value(logits);
    Ok(tokens
        .iter()
        .enumerate()
        .map(|(j, &tok)| {
            let mut row = lv.row(j).to_vec();
            log_softmax_in_place(&mut row);
            row[tok]
        })
        .collect())
}
