use super::blocks::{
    attention, embed_positions, feed_forward, init_attn, init_ff, init_ln, layer_norm, residual,
    AttnIds, Dropout, FfIds, LnIds,
};
use super::params::{read_checkpoint, write_checkpoint};
use super::{sinusoid_table, ModelConfig, NetError, ParamSet};
use crate::autograd::{Tape, Var};
use crate::corpus::{TokenSeq, Vocabulary};
use crate::tensor::{argmax, Mat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone)]
struct EncLayer {
    ln1: LnIds,
    attn: AttnIds,
    ln2: LnIds,
    ff: FfIds,
}

#[derive(Debug, Clone)]
struct DecLayer {
    ln1: LnIds,
    self_attn: AttnIds,
    ln2: LnIds,
    cross: AttnIds,
    ln3: LnIds,
    ff: FfIds,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: usize,
    enc: Vec<EncLayer>,
    enc_ln: LnIds,
    dec: Vec<DecLayer>,
    dec_ln: LnIds,
    out_bias: usize,
}

/// Encoder-decoder parameters. One embedding matrix serves the encoder, the
/// decoder input and (transposed) the output projection.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub set: ParamSet,
    layout: Layout,
    pos: Mat,
}

fn build_layout(cfg: &ModelConfig, set: &mut ParamSet, rng: &mut ChaCha8Rng) -> Layout {
    let d = cfg.dim;
    let embed = set.push(
        "embed",
        Mat::randn(cfg.vocab_size, d, 1.0 / (d as f64).sqrt(), rng),
    );
    let enc = (0..cfg.layers)
        .map(|l| EncLayer {
            ln1: init_ln(set, &format!("enc.{l}.ln1"), d),
            attn: init_attn(set, &format!("enc.{l}.attn"), d, rng),
            ln2: init_ln(set, &format!("enc.{l}.ln2"), d),
            ff: init_ff(set, &format!("enc.{l}.ff"), d, cfg.ff_dim, rng),
        })
        .collect();
    let enc_ln = init_ln(set, "enc.ln", d);
    let dec = (0..cfg.layers)
        .map(|l| DecLayer {
            ln1: init_ln(set, &format!("dec.{l}.ln1"), d),
            self_attn: init_attn(set, &format!("dec.{l}.self"), d, rng),
            ln2: init_ln(set, &format!("dec.{l}.ln2"), d),
            cross: init_attn(set, &format!("dec.{l}.cross"), d, rng),
            ln3: init_ln(set, &format!("dec.{l}.ln3"), d),
            ff: init_ff(set, &format!("dec.{l}.ff"), d, cfg.ff_dim, rng),
        })
        .collect();
    let dec_ln = init_ln(set, "dec.ln", d);
    let out_bias = set.push("out.bias", Mat::zeros(1, cfg.vocab_size));
    Layout {
        embed,
        enc,
        enc_ln,
        dec,
        dec_ln,
        out_bias,
    }
}

pub fn init_model(cfg: &ModelConfig) -> Result<ModelParams, NetError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut set = ParamSet::new();
    let layout = build_layout(cfg, &mut set, &mut rng);
    Ok(ModelParams {
        cfg: cfg.clone(),
        set,
        layout,
        pos: sinusoid_table(cfg.max_len, cfg.dim),
    })
}

impl ModelParams {
    pub fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    /// `(V, dim)` encoder embedding matrix.
    pub fn embedding(&self) -> &Mat {
        self.set.get(self.layout.embed)
    }

    pub fn embed_index(&self) -> usize {
        self.layout.embed
    }

    pub fn bind<'p>(&'p self, t: &mut Tape<'p>, trainable: bool) -> Vec<Var> {
        self.set.bind(t, trainable)
    }

    fn check_len(&self, len: usize) -> Result<(), NetError> {
        if len == 0 {
            return Err(NetError::Empty);
        }
        if len > self.cfg.max_len {
            return Err(NetError::TooLong {
                len,
                max: self.cfg.max_len,
            });
        }
        Ok(())
    }

    pub fn embed_ids(&self, t: &mut Tape<'_>, p: &[Var], ids: &[usize]) -> Var {
        t.gather(p[self.layout.embed], ids)
    }

    /// Expected embeddings `dist * E_enc` for a `steps x V` distribution.
    pub fn embed_soft(&self, t: &mut Tape<'_>, p: &[Var], dist: Var) -> Var {
        t.matmul(dist, p[self.layout.embed])
    }

    /// Contextual encoder states for an `n x dim` embedding sequence.
    pub fn encoder(&self, t: &mut Tape<'_>, p: &[Var], embeds: Var, drop: &mut Dropout) -> Result<Var, NetError> {
        self.check_len(t.value(embeds).rows())?;
        let heads = self.cfg.heads;
        let mut x = embed_positions(t, embeds, &self.pos, drop);
        for layer in &self.layout.enc {
            let h = layer_norm(t, p, layer.ln1, x);
            let a = attention(t, p, layer.attn, h, h, heads, false);
            x = residual(t, x, a, drop);
            let h = layer_norm(t, p, layer.ln2, x);
            let f = feed_forward(t, p, layer.ff, h, drop);
            x = residual(t, x, f, drop);
        }
        Ok(layer_norm(t, p, self.layout.enc_ln, x))
    }

    pub fn encode_ids(&self, t: &mut Tape<'_>, p: &[Var], ids: &[usize], drop: &mut Dropout) -> Result<Var, NetError> {
        self.check_len(ids.len())?;
        let e = self.embed_ids(t, p, ids);
        self.encoder(t, p, e, drop)
    }

    /// Final decoder states for teacher-forced input `dec_in`.
    pub fn decoder_states(
        &self,
        t: &mut Tape<'_>,
        p: &[Var],
        memory: Var,
        dec_in: &[usize],
        drop: &mut Dropout,
    ) -> Result<Var, NetError> {
        self.check_len(dec_in.len())?;
        let heads = self.cfg.heads;
        let e = self.embed_ids(t, p, dec_in);
        let mut x = embed_positions(t, e, &self.pos, drop);
        for layer in &self.layout.dec {
            let h = layer_norm(t, p, layer.ln1, x);
            let a = attention(t, p, layer.self_attn, h, h, heads, true);
            x = residual(t, x, a, drop);
            let h = layer_norm(t, p, layer.ln2, x);
            let c = attention(t, p, layer.cross, h, memory, heads, false);
            x = residual(t, x, c, drop);
            let h = layer_norm(t, p, layer.ln3, x);
            let f = feed_forward(t, p, layer.ff, h, drop);
            x = residual(t, x, f, drop);
        }
        Ok(layer_norm(t, p, self.layout.dec_ln, x))
    }

    /// Output logits (`rows x V`) through the tied embedding.
    pub fn project(&self, t: &mut Tape<'_>, p: &[Var], states: Var) -> Var {
        let logits = t.matmul_nt(states, p[self.layout.embed]);
        t.add_row(logits, p[self.layout.out_bias])
    }

    /// Teacher-forced logits, one row per decoder input position.
    pub fn decoder_logits(
        &self,
        t: &mut Tape<'_>,
        p: &[Var],
        memory: Var,
        dec_in: &[usize],
        drop: &mut Dropout,
    ) -> Result<Var, NetError> {
        let h = self.decoder_states(t, p, memory, dec_in, drop)?;
        Ok(self.project(t, p, h))
    }

    /// Teacher-forced summed cross-entropy of `target` given `src`; the
    /// decoder input is `target` shifted right behind `<s>`.
    pub fn seq_nll(
        &self,
        t: &mut Tape<'_>,
        p: &[Var],
        src: &[usize],
        target: &[usize],
        drop: &mut Dropout,
    ) -> Result<Var, NetError> {
        let memory = self.encode_ids(t, p, src, drop)?;
        let dec_in = shift_right(target);
        let logits = self.decoder_logits(t, p, memory, &dec_in, drop)?;
        let logp = t.log_softmax(logits);
        Ok(t.nll(logp, target))
    }

    /// Greedy decoding given precomputed encoder states. Stops after `</s>`
    /// or `max_len` tokens.
    pub fn greedy_from_memory<'p>(
        &'p self,
        t: &mut Tape<'p>,
        p: &[Var],
        memory: Var,
        max_len: usize,
    ) -> Result<TokenSeq, NetError> {
        let max_len = max_len.min(self.cfg.max_len);
        let mut out = Vec::with_capacity(max_len);
        let mut drop = Dropout::none();
        while out.len() < max_len {
            let dec_in = shift_right(&out_with_slot(&out));
            let h = self.decoder_states(t, p, memory, &dec_in, &mut drop)?;
            let last = t.slice_rows(h, dec_in.len() - 1, 1);
            let logits = self.project(t, p, last);
            let next = argmax(t.value(logits).row(0));
            out.push(next);
            if next == Vocabulary::EOS_ID {
                break;
            }
        }
        Ok(TokenSeq(out))
    }

    pub fn save(&self, path: &Path, vocab_hash: &str) -> Result<(), NetError> {
        write_checkpoint(path, "seq2seq", &self.cfg, vocab_hash, &self.set)
    }

    /// Loads a checkpoint, refusing one written for another vocabulary.
    pub fn load(path: &Path, vocab_hash: &str) -> Result<Self, NetError> {
        let (cfg, set): (ModelConfig, ParamSet) = read_checkpoint(path, "seq2seq", vocab_hash)?;
        let fresh = init_model(&cfg)?;
        if fresh.set.names() != set.names() {
            return Err(NetError::BadCheckpoint("tensor layout differs from config".into()));
        }
        Ok(Self { set, ..fresh })
    }
}

/// `[<s>, ids[0], ..., ids[n-2]]`
pub(crate) fn shift_right(ids: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(ids.len());
    v.push(Vocabulary::BOS_ID);
    if !ids.is_empty() {
        v.extend_from_slice(&ids[..ids.len() - 1]);
    }
    v
}

// Decoder input for predicting the next token after `prefix`: shifting
// `prefix + [slot]` right yields `[<s>] + prefix`.
fn out_with_slot(prefix: &[usize]) -> Vec<usize> {
    let mut v = prefix.to_vec();
    v.push(Vocabulary::PAD_ID);
    v
}

/// Contextual encoder states for a token sequence, without gradients.
pub fn encode(params: &ModelParams, tokens: &TokenSeq) -> Result<Mat, NetError> {
    let mut t = Tape::new();
    let p = params.bind(&mut t, false);
    let out = params.encode_ids(&mut t, &p, tokens, &mut Dropout::none())?;
    Ok(t.value(out).clone())
}

/// Same pipeline as [`encode`], entered at the embedding level.
pub fn encode_soft(params: &ModelParams, embeds: &Mat) -> Result<Mat, NetError> {
    let mut t = Tape::new();
    let p = params.bind(&mut t, false);
    let e = t.constant(embeds.clone());
    let out = params.encoder(&mut t, &p, e, &mut Dropout::none())?;
    Ok(t.value(out).clone())
}

/// Argmax decoding conditioned on `src`.
pub fn greedy_decode(params: &ModelParams, src: &TokenSeq, max_len: usize) -> Result<TokenSeq, NetError> {
    let mut t = Tape::new();
    let p = params.bind(&mut t, false);
    let memory = params.encode_ids(&mut t, &p, src, &mut Dropout::none())?;
    params.greedy_from_memory(&mut t, &p, memory, max_len)
}
