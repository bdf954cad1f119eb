use super::objective::{joint_gradients, validate_selfsup, validate_unsup, GumbelNoise, ValidationScore};
use super::optim::{Adam, Schedule};
use super::pretrain::apply_update;
use super::TrainError;
use crate::corpus::TokenSeq;
use crate::losses::{LossBreakdown, LossWeights};
use crate::net::{Dropout, LmParams, ModelParams};
use crate::spe::{build_indexes, extract_pairs, write_pairs_tsv, AcceptedPair, SpeConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

/// Consecutive epochs without accepted pairs before training gives up.
pub const MAX_EMPTY_EPOCHS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    En,
    De,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub sup_batch: usize,
    pub unsup_batch: usize,
    pub val_batch: usize,
    /// TR sentences per mining call; the TR-side neighbourhood is taken
    /// within one such chunk.
    pub mine_batch: usize,
    /// Learning-rate warm-up, in updates.
    pub warmup: usize,
    /// Updates trained on the supervised term alone before the
    /// unsupervised term joins.
    pub warm_start: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Validate (and possibly checkpoint) every this many updates; 0 means
    /// once per epoch.
    pub checkpoint_every: usize,
    /// Hard cap on total updates; 0 means no cap.
    pub max_steps: usize,
    pub clip: f64,
    pub weights: LossWeights,
    pub spe: SpeConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_lang(Lang::En)
    }
}

impl TrainConfig {
    pub fn for_lang(lang: Lang) -> Self {
        let (warm, batch, threshold) = match lang {
            Lang::En => (300, 160, 1.01),
            Lang::De => (600, 40, 1.02),
        };
        Self {
            lr: 3e-4,
            sup_batch: batch,
            unsup_batch: batch,
            val_batch: 500,
            mine_batch: 1000,
            warmup: warm,
            warm_start: warm,
            epochs: 30,
            patience: 15,
            checkpoint_every: 2,
            max_steps: 0,
            clip: 1.0,
            weights: LossWeights::default(),
            spe: SpeConfig {
                threshold,
                ..SpeConfig::default()
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.sup_batch == 0 || self.unsup_batch == 0 || self.val_batch == 0 || self.mine_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.clip >= 0.0) {
            return bad("clip must be >= 0");
        }
        self.weights.validate()?;
        self.spe.validate()?;
        Ok(())
    }
}

/// Keeps the best validation score and counts validations since it last
/// improved.
#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    pub patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
    history: Vec<(usize, f64)>,
}

impl Selector {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
            history: Vec::new(),
        }
    }

    /// Records a score (lower is better); true when it is a new best.
    pub fn observe(&mut self, step: usize, score: f64) -> bool {
        self.history.push((step, score));
        let improved = self.best.is_none_or(|(_, b)| score < b);
        if improved {
            self.best = Some((step, score));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    /// True once `patience` consecutive validations failed to improve.
    /// Zero patience never stops.
    pub fn should_stop(&self) -> bool {
        self.patience > 0 && self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn history(&self) -> &[(usize, f64)] {
        &self.history
    }
}

/// Endless in-order cycling over accepted pairs.
#[derive(Debug, Clone)]
pub struct PairCycler<T> {
    items: Vec<T>,
    pos: usize,
}

impl<T: Clone> PairCycler<T> {
    pub fn new(items: Vec<T>) -> Self {
        Self { items, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn next_batch(&mut self, n: usize) -> Vec<T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let x = self.items[self.pos].clone();
                self.pos = (self.pos + 1) % self.items.len();
                x
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    /// `mine`, `sup`, `joint` or `validate`.
    pub phase: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accepted_pairs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_ce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub improved: Option<bool>,
}

impl LogRecord {
    fn new(step: usize, epoch: usize, phase: &str) -> Self {
        Self {
            step,
            epoch,
            phase: phase.into(),
            lr: None,
            losses: None,
            accepted_pairs: None,
            validation: None,
            val_ce: None,
            improved: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BestManifest {
    step: usize,
    score: f64,
    checkpoint: String,
}

/// Training log kept in memory and, with an output directory, mirrored to
/// `train_log.jsonl`, `pairs.tsv`, per-validation checkpoints and a
/// `best.json` manifest naming the selected one.
#[derive(Debug)]
pub struct JsonLog {
    pub records: Vec<LogRecord>,
    out_dir: Option<PathBuf>,
    vocab_hash: String,
    writer: Option<BufWriter<File>>,
}

impl JsonLog {
    pub fn in_memory() -> Self {
        Self {
            records: Vec::new(),
            out_dir: None,
            vocab_hash: String::new(),
            writer: None,
        }
    }

    pub fn to_dir(dir: impl Into<PathBuf>, vocab_hash: &str) -> Result<Self, TrainError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("checkpoints"))?;
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(dir.join("train_log.jsonl"))?;
        File::create(dir.join("pairs.tsv"))?;
        Ok(Self {
            records: Vec::new(),
            out_dir: Some(dir),
            vocab_hash: vocab_hash.into(),
            writer: Some(BufWriter::new(f)),
        })
    }

    fn push(&mut self, r: LogRecord) -> Result<(), TrainError> {
        if let Some(w) = self.writer.as_mut() {
            serde_json::to_writer(&mut *w, &r)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        log::debug!("{}", serde_json::to_string(&r)?);
        self.records.push(r);
        Ok(())
    }

    fn pairs(&mut self, epoch: usize, pairs: &[AcceptedPair]) -> Result<(), TrainError> {
        if let Some(dir) = &self.out_dir {
            let mut f = OpenOptions::new().append(true).open(dir.join("pairs.tsv"))?;
            write_pairs_tsv(&mut f, epoch, pairs)?;
        }
        Ok(())
    }

    fn checkpoint(&mut self, params: &ModelParams, step: usize, score: f64) -> Result<(), TrainError> {
        if let Some(dir) = &self.out_dir {
            let name = format!("checkpoints/step_{step:06}.ckpt");
            params.save(&dir.join(&name), &self.vocab_hash)?;
            let m = BestManifest {
                step,
                score,
                checkpoint: name,
            };
            fs::write(dir.join("best.json"), serde_json::to_vec_pretty(&m)?)?;
        }
        Ok(())
    }

    /// Loss breakdowns of the update steps, in order.
    pub fn breakdowns(&self) -> Vec<(usize, LossBreakdown)> {
        self.records
            .iter()
            .filter_map(|r| r.losses.map(|l| (r.step, l)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelParams,
    /// Update count at the selected validation, 0 if none ran.
    pub best_step: usize,
    pub best_score: f64,
    /// `(step, score)` for every validation.
    pub history: Vec<(usize, f64)>,
    pub steps: usize,
    pub stopped_early: bool,
    pub pair_counts: Vec<usize>,
}

/// Mines `(tr, og)` pairs over the whole TR corpus in chunks of
/// `chunk` sentences against an index of the OG corpus.
pub fn mine_pairs(
    params: &ModelParams,
    og: &[TokenSeq],
    tr: &[TokenSeq],
    spe: &SpeConfig,
    chunk: usize,
) -> Result<Vec<AcceptedPair>, TrainError> {
    if chunk == 0 {
        return Err(TrainError::InvalidConfig("mining chunk must be positive".into()));
    }
    let indexes = build_indexes(params, og, spe)?;
    let mut pairs = Vec::new();
    let ids: Vec<usize> = (0..tr.len()).collect();
    for c in ids.chunks(chunk) {
        let batch: Vec<(usize, TokenSeq)> = c.iter().map(|&i| (i, tr[i].clone())).collect();
        pairs.extend(extract_pairs(params, &batch, &indexes, spe)?);
    }
    Ok(pairs)
}

enum Validator<'a> {
    Selfsup(&'a [(TokenSeq, TokenSeq)]),
    Unsup {
        lm: &'a LmParams,
        reference: &'a ModelParams,
        val: &'a [TokenSeq],
        weights: LossWeights,
    },
}

impl Validator<'_> {
    fn run(&self, params: &ModelParams, rec: &mut LogRecord) -> Result<f64, TrainError> {
        match self {
            Validator::Selfsup(pairs) => {
                let ce = validate_selfsup(params, pairs)?;
                rec.val_ce = Some(ce);
                Ok(ce)
            }
            Validator::Unsup {
                lm,
                reference,
                val,
                weights,
            } => {
                let s = validate_unsup(params, lm, reference, val, weights)?;
                rec.validation = Some(s);
                Ok(s.combined)
            }
        }
    }
}

struct Loop<'a> {
    params: &'a mut ModelParams,
    lm: Option<&'a LmParams>,
    cfg: &'a TrainConfig,
    validator: Validator<'a>,
    log: &'a mut JsonLog,
    opt: Adam,
    sched: Schedule,
    selector: Selector,
    best: ModelParams,
    step: usize,
    drop: Dropout,
}

impl Loop<'_> {
    fn capped(&self) -> bool {
        self.cfg.max_steps > 0 && self.step >= self.cfg.max_steps
    }

    fn validate(&mut self, epoch: usize) -> Result<(), TrainError> {
        let mut rec = LogRecord::new(self.step, epoch, "validate");
        let score = self.validator.run(self.params, &mut rec)?;
        let improved = self.selector.observe(self.step, score);
        rec.improved = Some(improved);
        if improved {
            self.best = self.params.clone();
            self.log.checkpoint(self.params, self.step, score)?;
        }
        self.log.push(rec)
    }

    // One update; returns true when training should stop.
    fn update(
        &mut self,
        epoch: usize,
        sup: &[(TokenSeq, TokenSeq)],
        unsup: &[TokenSeq],
    ) -> Result<bool, TrainError> {
        let include_unsup = self.lm.is_some() && self.step >= self.cfg.warm_start;
        let step_seed = self.cfg.seed ^ (self.step as u64).wrapping_mul(0xa076_1d64_78bd_642f);
        let noise = GumbelNoise::Seeded(step_seed);
        let mut unsup_drop = Dropout::new(self.params.cfg.dropout, step_seed ^ 0x756e);
        let g = joint_gradients(
            self.params,
            self.lm,
            sup,
            unsup,
            &self.cfg.weights,
            include_unsup,
            &noise,
            &mut self.drop,
            &mut unsup_drop,
        )?;
        self.step += 1;
        let lr = self.sched.lr(self.step);
        apply_update(&mut self.opt, &mut self.params.set, g.grads, &self.sched, self.step, self.cfg.clip);
        let mut rec = LogRecord::new(self.step, epoch, if include_unsup { "joint" } else { "sup" });
        rec.lr = Some(lr);
        rec.losses = Some(g.breakdown);
        self.log.push(rec)?;
        if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
            self.validate(epoch)?;
        }
        Ok(self.selector.should_stop() || self.capped())
    }

    fn finish(self, stopped_early: bool, pair_counts: Vec<usize>) -> TrainOutcome {
        let (best_step, best_score) = self.selector.best().unwrap_or((0, f64::INFINITY));
        TrainOutcome {
            best: self.best,
            best_step,
            best_score,
            history: self.selector.history().to_vec(),
            steps: self.step,
            stopped_early,
            pair_counts,
        }
    }
}

fn run(
    mut lp: Loop<'_>,
    og: &[TokenSeq],
    tr: &[TokenSeq],
) -> Result<TrainOutcome, TrainError> {
    let cfg = lp.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut empty = 0;
    let mut counts = Vec::new();
    let joint = lp.lm.is_some();
    for epoch in 1..=cfg.epochs {
        let pairs = mine_pairs(lp.params, og, tr, &cfg.spe, cfg.mine_batch)?;
        counts.push(pairs.len());
        lp.log.pairs(epoch, &pairs)?;
        let mut rec = LogRecord::new(lp.step, epoch, "mine");
        rec.accepted_pairs = Some(pairs.len());
        lp.log.push(rec)?;
        if pairs.is_empty() {
            empty += 1;
            log::warn!("epoch {epoch}: no pairs accepted");
            if empty >= MAX_EMPTY_EPOCHS {
                return Err(TrainError::NoPairs(empty));
            }
            continue;
        }
        empty = 0;
        let mut cycler = PairCycler::new(
            pairs
                .iter()
                .map(|p| (tr[p.tr].clone(), og[p.og].clone()))
                .collect::<Vec<_>>(),
        );
        let mut stop = false;
        if joint {
            let mut order: Vec<usize> = (0..tr.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.unsup_batch) {
                let unsup: Vec<TokenSeq> = chunk.iter().map(|&i| tr[i].clone()).collect();
                let sup = cycler.next_batch(cfg.sup_batch);
                if lp.update(epoch, &sup, &unsup)? {
                    stop = true;
                    break;
                }
            }
        } else {
            let n = pairs.len().div_ceil(cfg.sup_batch);
            for _ in 0..n {
                let sup = cycler.next_batch(cfg.sup_batch);
                if lp.update(epoch, &sup, &[])? {
                    stop = true;
                    break;
                }
            }
        }
        if cfg.checkpoint_every == 0 {
            lp.validate(epoch)?;
            stop |= lp.selector.should_stop();
        }
        if stop {
            let early = lp.selector.should_stop();
            return Ok(lp.finish(early, counts));
        }
    }
    Ok(lp.finish(false, counts))
}

fn new_loop<'a>(
    params: &'a mut ModelParams,
    lm: Option<&'a LmParams>,
    cfg: &'a TrainConfig,
    validator: Validator<'a>,
    log: &'a mut JsonLog,
) -> Loop<'a> {
    Loop {
        opt: Adam::new(&params.set),
        sched: Schedule {
            base_lr: cfg.lr,
            warmup: cfg.warmup,
        },
        selector: Selector::new(cfg.patience),
        best: params.clone(),
        step: 0,
        drop: Dropout::new(params.cfg.dropout, cfg.seed ^ 0x6a6f696e),
        params,
        lm,
        cfg,
        validator,
        log,
    }
}

/// Self-supervised baseline: each epoch mines pairs with the current model
/// and trains on them; selection by validation cross-entropy on aligned
/// `(mTR, OG)` pairs. `params` ends at the last update; the selected
/// model is in the outcome.
pub fn train_selfsup(
    params: &mut ModelParams,
    og: &[TokenSeq],
    tr: &[TokenSeq],
    parallel_val: &[(TokenSeq, TokenSeq)],
    cfg: &TrainConfig,
    log: &mut JsonLog,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if og.is_empty() || tr.is_empty() {
        return Err(TrainError::Empty("training corpus"));
    }
    if parallel_val.is_empty() {
        return Err(TrainError::Empty("validation set"));
    }
    let val = &parallel_val[..parallel_val.len().min(cfg.val_batch)];
    let lp = new_loop(params, None, cfg, Validator::Selfsup(val), log);
    run(lp, og, tr)
}

/// Joint training: supervised updates on mined pairs for the first
/// `warm_start` steps, then every step also carries the unsupervised
/// style and content terms over a TR batch. Selection by the combined
/// unsupervised validation score.
#[allow(clippy::too_many_arguments)]
pub fn train_joint(
    params: &mut ModelParams,
    lm: &LmParams,
    reference: &ModelParams,
    og: &[TokenSeq],
    tr: &[TokenSeq],
    unsup_val: &[TokenSeq],
    cfg: &TrainConfig,
    log: &mut JsonLog,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if og.is_empty() || tr.is_empty() {
        return Err(TrainError::Empty("training corpus"));
    }
    if unsup_val.is_empty() {
        return Err(TrainError::Empty("validation set"));
    }
    if lm.vocab_size() != params.vocab_size() {
        return Err(TrainError::InvalidConfig(format!(
            "LM vocabulary {} differs from model vocabulary {}",
            lm.vocab_size(),
            params.vocab_size()
        )));
    }
    let validator = Validator::Unsup {
        lm,
        reference,
        val: &unsup_val[..unsup_val.len().min(cfg.val_batch)],
        weights: cfg.weights,
    };
    let lp = new_loop(params, Some(lm), cfg, validator, log);
    run(lp, og, tr)
}
