//! Run configuration: one JSON object with flat dotted keys such as
//! `"loss.alpha"` or `"train.patience"`. Layers, lowest first: built-in
//! defaults, the language preset named by `train.lang`, the config file,
//! then `--set key=value` flags.

use ogstyle::corpus::NoiseConfig;
use ogstyle::losses::LossWeights;
use ogstyle::net::ModelConfig;
use ogstyle::spe::SpeConfig;
use ogstyle::trainer::{DaeConfig, Lang, LmTrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Environment variable naming the output root when `out_dir` is unset.
pub const OUT_ENV: &str = "OGSTYLE_OUT";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Malformed(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Input corpora; empty paths resolve under `<out>/data/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub og: String,
    pub tr: String,
    /// Machine-translationese aligned line by line with `og`.
    pub mtr: String,
    pub og_test: String,
    pub tr_test: String,
    pub bpe_merges: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            og: String::new(),
            tr: String::new(),
            mtr: String::new(),
            og_test: String::new(),
            tr_test: String::new(),
            bpe_merges: 3000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Marker,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_og: usize,
    pub n_tr: usize,
    pub test_size: usize,
    pub transform: TransformKind,
    pub filler_prob: f64,
    /// Word-substitution rate of the mTR surrogate.
    pub mtr_noise: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_og: 5000,
            n_tr: 5000,
            test_size: 300,
            transform: TransformKind::Marker,
            filler_prob: 0.3,
            mtr_noise: 0.05,
        }
    }
}

/// Training-loop settings; the loss weights and mining settings live in
/// their own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lang: Lang,
    pub lr: f64,
    pub sup_batch: usize,
    pub unsup_batch: usize,
    pub val_batch: usize,
    pub mine_batch: usize,
    pub warmup: usize,
    pub warm_start: usize,
    pub epochs: usize,
    pub patience: usize,
    pub checkpoint_every: usize,
    pub max_steps: usize,
    pub clip: f64,
}

impl TrainSection {
    fn preset(lang: Lang) -> Self {
        let t = TrainConfig::for_lang(lang);
        Self {
            lang,
            lr: t.lr,
            sup_batch: t.sup_batch,
            unsup_batch: t.unsup_batch,
            val_batch: t.val_batch,
            mine_batch: t.mine_batch,
            warmup: t.warmup,
            warm_start: t.warm_start,
            epochs: t.epochs,
            patience: t.patience,
            checkpoint_every: t.checkpoint_every,
            max_steps: t.max_steps,
            clip: t.clip,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        Self::preset(Lang::En)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub classifier_seed: u64,
    /// One word per line; empty uses the bundled list.
    pub function_words: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            classifier_seed: 1,
            function_words: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Added to every component seed.
    pub seed: u64,
    /// Empty means `$OGSTYLE_OUT`, or `runs` when that is unset too.
    pub out_dir: String,
    pub corpus: CorpusSection,
    pub synth: SynthSection,
    pub model: ModelConfig,
    pub dae: DaeConfig,
    pub lm: LmTrainConfig,
    pub train: TrainSection,
    pub loss: LossWeights,
    pub spe: SpeConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_lang(Lang::En)
    }
}

impl RunConfig {
    pub fn for_lang(lang: Lang) -> Self {
        let t = TrainConfig::for_lang(lang);
        Self {
            seed: 0,
            out_dir: String::new(),
            corpus: CorpusSection::default(),
            synth: SynthSection::default(),
            model: ModelConfig::default(),
            dae: DaeConfig::default(),
            lm: LmTrainConfig::default(),
            train: TrainSection::preset(lang),
            loss: t.weights,
            spe: t.spe,
            eval: EvalSection::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        // The vocabulary size comes from the tokenizer at run time.
        let model = ModelConfig {
            vocab_size: self.model.vocab_size.max(6),
            ..self.model.clone()
        };
        model.validate().map_err(|e| inv(&e))?;
        self.dae.noise.validate().map_err(|e| inv(&e))?;
        self.train_config().validate().map_err(|e| inv(&e))?;
        if self.dae.batch_size == 0 || self.lm.batch_size == 0 {
            return Err(ConfigError::Invalid("batch sizes must be positive".into()));
        }
        if !(self.dae.lr > 0.0) || !(self.lm.lr > 0.0) {
            return Err(ConfigError::Invalid("learning rates must be positive".into()));
        }
        if self.synth.n_og == 0 || self.synth.n_tr == 0 || self.synth.test_size == 0 {
            return Err(ConfigError::Invalid("synth sizes must be positive".into()));
        }
        for (name, p) in [("synth.mtr_noise", self.synth.mtr_noise), ("synth.filler_prob", self.synth.filler_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("{name}={p} outside [0,1]")));
            }
        }
        if self.corpus.bpe_merges == 0 {
            return Err(ConfigError::Invalid("corpus.bpe_merges must be positive".into()));
        }
        Ok(())
    }

    /// Component seeds are offsets from the global seed.
    pub fn seeded(&self, component: u64) -> u64 {
        self.seed.wrapping_add(component)
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            seed: self.seeded(self.model.seed),
            ..self.model.clone()
        }
    }

    pub fn dae_config(&self) -> DaeConfig {
        DaeConfig {
            seed: self.seeded(self.dae.seed),
            noise: NoiseConfig {
                seed: self.seeded(self.dae.noise.seed),
                ..self.dae.noise
            },
            ..self.dae.clone()
        }
    }

    pub fn lm_config(&self) -> LmTrainConfig {
        LmTrainConfig {
            seed: self.seeded(self.lm.seed),
            ..self.lm.clone()
        }
    }

    pub fn spe_config(&self) -> SpeConfig {
        SpeConfig {
            seed: self.seeded(self.spe.seed),
            ..self.spe.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            sup_batch: t.sup_batch,
            unsup_batch: t.unsup_batch,
            val_batch: t.val_batch,
            mine_batch: t.mine_batch,
            warmup: t.warmup,
            warm_start: t.warm_start,
            epochs: t.epochs,
            patience: t.patience,
            checkpoint_every: t.checkpoint_every,
            max_steps: t.max_steps,
            clip: t.clip,
            weights: self.loss,
            spe: self.spe_config(),
            seed: self.seed,
        }
    }

    pub fn out_root(&self) -> PathBuf {
        if !self.out_dir.is_empty() {
            return PathBuf::from(&self.out_dir);
        }
        match std::env::var(OUT_ENV) {
            Ok(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from("runs"),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Every setting as a flat dotted-key map.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("intermediate keys are objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

/// Parses `key=value`; the value is read as JSON when it parses, else
/// taken as a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), ConfigError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| ConfigError::Malformed(format!("expected key=value, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn read_file(path: &Path) -> Result<BTreeMap<String, Value>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let v: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Malformed(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(ConfigError::Malformed(format!("{}: top level must be an object", path.display())));
    }
    let mut flat = BTreeMap::new();
    flatten("", &v, &mut flat);
    Ok(flat)
}

/// Resolves the effective configuration: flags override the file, which
/// overrides the language preset and built-in defaults.
pub fn parse_config(file: Option<&Path>, sets: &[(String, Value)]) -> Result<RunConfig, ConfigError> {
    let from_file = match file {
        Some(p) => read_file(p)?,
        None => BTreeMap::new(),
    };
    let lang_value = sets
        .iter()
        .rev()
        .find(|(k, _)| k == "train.lang")
        .map(|(_, v)| v.clone())
        .or_else(|| from_file.get("train.lang").cloned());
    let lang = match lang_value {
        Some(v) => serde_json::from_value::<Lang>(v.clone())
            .map_err(|_| ConfigError::Invalid(format!("train.lang must be \"en\" or \"de\", got {v}")))?,
        None => Lang::En,
    };
    let mut flat = RunConfig::for_lang(lang).to_flat();
    for (k, v) in from_file.iter().chain(sets.iter().map(|(k, v)| (k, v))) {
        match flat.get_mut(k) {
            Some(slot) => *slot = v.clone(),
            None => return Err(ConfigError::UnknownKey(k.clone())),
        }
    }
    let cfg: RunConfig = serde_json::from_value(unflatten(&flat)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
