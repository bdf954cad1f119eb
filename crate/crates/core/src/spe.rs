//! Sentence-pair extraction from comparable corpora.
//!
//! Each sentence gets two representations from the current model: the sum
//! of its word embeddings (`w`) and the sum of its encoder outputs (`e`).
//! Candidates for a TR sentence `x` are its nearest OG sentences under each
//! representation, re-ranked by the ratio margin
//!
//! ```text
//! score(x, y) = cos(x, y) / (sum(nn_x) / 2k + sum(nn_y) / 2k)
//! ```
//!
//! where `nn_x` are the cosines of `x`'s k nearest OG sentences and `nn_y`
//! those of `y`'s k nearest TR sentences in the current batch. Only the
//! forward direction (TR to OG) is searched.
//!
//! A pair is accepted when the same OG sentence is the top candidate under
//! both representations, or, in threshold mode, when its `e` margin exceeds
//! the threshold. The threshold applies to the margin score, not the raw
//! cosine.

use crate::annindex::{build_index, normalize, rank_order, IndexError, VecIndex};
use crate::corpus::TokenSeq;
use crate::net::{encode, ModelParams, NetError};
use crate::tensor::dot;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::io::Write;

#[derive(Debug, thiserror::Error)]
pub enum SpeError {
    #[error("empty OG corpus")]
    EmptyOg,
    #[error("invalid SPE config: {0}")]
    InvalidConfig(String),
    #[error("representation mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RepKind {
    WordSum,
    EncoderSum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRep {
    /// Unnormalised sum.
    pub vector: Vec<f64>,
    pub kind: RepKind,
    pub id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMode {
    /// Mutual top-1 under both representations.
    #[serde(rename = "1")]
    Mutual,
    /// Mutual top-1, or encoder margin above the threshold.
    #[serde(rename = "2")]
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeConfig {
    pub k: usize,
    /// Candidates retrieved per TR sentence before margin re-ranking.
    pub depth: usize,
    pub threshold: f64,
    pub mode: FilterMode,
    pub num_clusters: usize,
    pub nprobe: usize,
    pub seed: u64,
}

impl Default for SpeConfig {
    fn default() -> Self {
        Self {
            k: 4,
            depth: 10,
            threshold: 1.01,
            mode: FilterMode::Mutual,
            num_clusters: 16,
            nprobe: 20,
            seed: 0,
        }
    }
}

impl SpeConfig {
    pub fn validate(&self) -> Result<(), SpeError> {
        let bad = |m: &str| Err(SpeError::InvalidConfig(m.into()));
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if self.depth == 0 {
            return bad("depth must be >= 1");
        }
        if self.num_clusters == 0 || self.nprobe == 0 {
            return bad("num_clusters and nprobe must be >= 1");
        }
        if self.mode == FilterMode::Threshold && !(self.threshold > 0.0) {
            return bad("threshold must be > 0 in threshold mode");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcceptRule {
    MutualTop1,
    Threshold,
}

impl AcceptRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            AcceptRule::MutualTop1 => "mutual-top-1",
            AcceptRule::Threshold => "threshold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptedPair {
    pub tr: usize,
    pub og: usize,
    pub w_score: f64,
    pub e_score: f64,
    pub rule: AcceptRule,
}

/// Sum over positions of the chosen representation. Sequences longer
/// than the model's `max_len` are represented by their prefix.
pub fn represent(params: &ModelParams, seq: &TokenSeq, id: usize, kind: RepKind) -> Result<SentenceRep, SpeError> {
    if seq.is_empty() {
        return Err(SpeError::Net(NetError::Empty));
    }
    let clipped;
    let seq = if seq.len() > params.cfg.max_len {
        clipped = TokenSeq(seq.0[..params.cfg.max_len].to_vec());
        &clipped
    } else {
        seq
    };
    let rows = match kind {
        RepKind::WordSum => params.embedding().select_rows(seq),
        RepKind::EncoderSum => encode(params, seq)?,
    };
    let mut vector = vec![0.0; rows.cols()];
    for r in 0..rows.rows() {
        for (v, x) in vector.iter_mut().zip(rows.row(r)) {
            *v += x;
        }
    }
    Ok(SentenceRep { vector, kind, id })
}

/// Both representations for each sequence, ids are positions.
pub fn represent_all(params: &ModelParams, seqs: &[TokenSeq]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), SpeError> {
    let mut w = Vec::with_capacity(seqs.len());
    let mut e = Vec::with_capacity(seqs.len());
    for (i, s) in seqs.iter().enumerate() {
        w.push(represent(params, s, i, RepKind::WordSum)?.vector);
        e.push(represent(params, s, i, RepKind::EncoderSum)?.vector);
    }
    Ok((w, e))
}

/// Ratio margin; `None` (with a warning) when the denominator is zero.
pub fn margin_score(sim_xy: f64, nn_x: &[f64], nn_y: &[f64]) -> Option<f64> {
    let side = |nn: &[f64]| {
        if nn.is_empty() {
            0.0
        } else {
            nn.iter().sum::<f64>() / (2.0 * nn.len() as f64)
        }
    };
    let denom = side(nn_x) + side(nn_y);
    if denom == 0.0 {
        log::warn!("zero margin denominator, pair skipped");
        return None;
    }
    Some(sim_xy / denom)
}

/// OG-side index for one representation kind; ids are OG positions.
#[derive(Debug, Clone)]
pub struct KindIndex {
    pub index: VecIndex,
    unit: Vec<Vec<f64>>,
}

impl KindIndex {
    pub fn build(vectors: &[Vec<f64>], num_clusters: usize, seed: u64) -> Result<Self, SpeError> {
        if vectors.is_empty() {
            return Err(SpeError::EmptyOg);
        }
        let items: Vec<(u64, Vec<f64>)> = vectors.iter().enumerate().map(|(i, v)| (i as u64, v.clone())).collect();
        let index = build_index(&items, num_clusters.min(vectors.len()), seed)?;
        Ok(Self {
            index,
            unit: vectors.iter().map(|v| normalize(v)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SpeIndexes {
    pub w: KindIndex,
    pub e: KindIndex,
}

impl SpeIndexes {
    pub fn from_reps(w: &[Vec<f64>], e: &[Vec<f64>], cfg: &SpeConfig) -> Result<Self, SpeError> {
        if w.len() != e.len() {
            return Err(SpeError::Mismatch(format!("{} w vs {} e vectors", w.len(), e.len())));
        }
        Ok(Self {
            w: KindIndex::build(w, cfg.num_clusters, cfg.seed)?,
            e: KindIndex::build(e, cfg.num_clusters, cfg.seed)?,
        })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Indexes both kinds over the OG corpus under the current parameters.
pub fn build_indexes(params: &ModelParams, og: &[TokenSeq], cfg: &SpeConfig) -> Result<SpeIndexes, SpeError> {
    cfg.validate()?;
    if og.is_empty() {
        return Err(SpeError::EmptyOg);
    }
    let (w, e) = represent_all(params, og)?;
    SpeIndexes::from_reps(&w, &e, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Best {
    og: usize,
    score: f64,
}

// Per-kind scoring state for one TR batch.
struct KindScorer<'a> {
    og: &'a KindIndex,
    tr_index: VecIndex,
    tr_unit: Vec<Vec<f64>>,
    nprobe_og: usize,
    nprobe_tr: usize,
    k: usize,
    nn_y_cache: RefCell<HashMap<usize, Vec<f64>>>,
}

impl<'a> KindScorer<'a> {
    fn new(og: &'a KindIndex, tr: &[Vec<f64>], cfg: &SpeConfig) -> Result<Self, SpeError> {
        let items: Vec<(u64, Vec<f64>)> = tr.iter().enumerate().map(|(i, v)| (i as u64, v.clone())).collect();
        let tr_index = build_index(&items, cfg.num_clusters.min(tr.len()), cfg.seed)?;
        Ok(Self {
            og,
            nprobe_og: cfg.nprobe.min(og.index.num_clusters()),
            nprobe_tr: cfg.nprobe.min(tr_index.num_clusters()),
            tr_index,
            tr_unit: tr.iter().map(|v| normalize(v)).collect(),
            k: cfg.k,
            nn_y_cache: RefCell::new(HashMap::new()),
        })
    }

    fn nn_x(&self, x: usize, depth: usize) -> Result<Vec<(u64, f64)>, SpeError> {
        Ok(self.og.index.search(&self.tr_unit[x], depth.max(self.k), self.nprobe_og)?)
    }

    fn nn_y(&self, y: usize) -> Result<Vec<f64>, SpeError> {
        if let Some(v) = self.nn_y_cache.borrow().get(&y) {
            return Ok(v.clone());
        }
        let v: Vec<f64> = self
            .tr_index
            .search(&self.og.unit[y], self.k, self.nprobe_tr)?
            .into_iter()
            .map(|h| h.1)
            .collect();
        self.nn_y_cache.borrow_mut().insert(y, v.clone());
        Ok(v)
    }

    fn best(&self, x: usize, depth: usize) -> Result<Option<Best>, SpeError> {
        let hits = self.nn_x(x, depth)?;
        let nn_x: Vec<f64> = hits.iter().take(self.k).map(|h| h.1).collect();
        let mut scored = Vec::new();
        for &(y, sim) in hits.iter().take(depth) {
            if let Some(s) = margin_score(sim, &nn_x, &self.nn_y(y as usize)?) {
                scored.push((y, s));
            }
        }
        scored.sort_by(rank_order);
        Ok(scored.first().map(|&(og, score)| Best { og: og as usize, score }))
    }

    fn score(&self, x: usize, y: usize) -> Result<Option<f64>, SpeError> {
        let hits = self.nn_x(x, self.k)?;
        let nn_x: Vec<f64> = hits.iter().take(self.k).map(|h| h.1).collect();
        let sim = dot(&self.tr_unit[x], &self.og.unit[y]);
        Ok(margin_score(sim, &nn_x, &self.nn_y(y)?))
    }
}

/// Extraction from precomputed TR representations. `tr_ids[i]` names the
/// sentence whose vectors are `tr_w[i]` and `tr_e[i]`.
pub fn extract_from_reps(
    tr_ids: &[usize],
    tr_w: &[Vec<f64>],
    tr_e: &[Vec<f64>],
    indexes: &SpeIndexes,
    cfg: &SpeConfig,
) -> Result<Vec<AcceptedPair>, SpeError> {
    cfg.validate()?;
    if indexes.is_empty() {
        return Err(SpeError::EmptyOg);
    }
    if tr_ids.len() != tr_w.len() || tr_ids.len() != tr_e.len() {
        return Err(SpeError::Mismatch("TR ids and vectors differ in length".into()));
    }
    if tr_ids.is_empty() {
        return Ok(Vec::new());
    }
    let ws = KindScorer::new(&indexes.w, tr_w, cfg)?;
    let es = KindScorer::new(&indexes.e, tr_e, cfg)?;
    let mut out = Vec::new();
    for (x, &tr) in tr_ids.iter().enumerate() {
        let bw = ws.best(x, cfg.depth)?;
        let be = es.best(x, cfg.depth)?;
        match (bw, be) {
            (Some(bw), Some(be)) if bw.og == be.og => out.push(AcceptedPair {
                tr,
                og: be.og,
                w_score: bw.score,
                e_score: be.score,
                rule: AcceptRule::MutualTop1,
            }),
            (bw, Some(be)) if cfg.mode == FilterMode::Threshold && be.score > cfg.threshold => {
                let w_score = match bw {
                    Some(b) if b.og == be.og => b.score,
                    _ => ws.score(x, be.og)?.unwrap_or(f64::NAN),
                };
                out.push(AcceptedPair {
                    tr,
                    og: be.og,
                    w_score,
                    e_score: be.score,
                    rule: AcceptRule::Threshold,
                });
            }
            _ => {}
        }
    }
    out.sort_by(|a, b| (a.tr, a.og).cmp(&(b.tr, b.og)));
    out.dedup_by(|a, b| a.tr == b.tr && a.og == b.og);
    Ok(out)
}

/// Mines `(tr, og)` pairs for a batch of TR sentences against indexes
/// built from the OG corpus under the same parameters.
pub fn extract_pairs(
    params: &ModelParams,
    tr_batch: &[(usize, TokenSeq)],
    indexes: &SpeIndexes,
    cfg: &SpeConfig,
) -> Result<Vec<AcceptedPair>, SpeError> {
    let ids: Vec<usize> = tr_batch.iter().map(|(i, _)| *i).collect();
    let seqs: Vec<TokenSeq> = tr_batch.iter().map(|(_, s)| s.clone()).collect();
    let (w, e) = represent_all(params, &seqs)?;
    extract_from_reps(&ids, &w, &e, indexes, cfg)
}

/// Fraction of pairs whose OG side matches `truth[tr]`.
pub fn precision(pairs: &[AcceptedPair], truth: &[usize]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let ok = pairs.iter().filter(|p| truth.get(p.tr) == Some(&p.og)).count();
    ok as f64 / pairs.len() as f64
}

/// One TSV line per pair: epoch, tr id, og id, w-score, e-score, rule.
pub fn write_pairs_tsv<W: Write>(out: &mut W, epoch: usize, pairs: &[AcceptedPair]) -> std::io::Result<()> {
    for p in pairs {
        writeln!(
            out,
            "{epoch}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            p.tr,
            p.og,
            p.w_score,
            p.e_score,
            p.rule.as_str()
        )?;
    }
    Ok(())
}
