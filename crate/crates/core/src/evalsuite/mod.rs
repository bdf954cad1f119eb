//! Style-transfer evaluation.
//!
//! Token statistics (TTR, lexical density) use lowercased whitespace
//! tokens with punctuation counted as tokens. Content words are
//! approximated as tokens outside a closed-class function-word list.

mod classifier;

pub use classifier::{
    ngram_features, train_classifier, EncoderClassifier, StyleClassifier, StylePredictor, TrainingMeta,
};

use crate::corpus::{normalize_ws, Style, TokenSeq, Tokenizer, Vocabulary};
use crate::net::{encode, lm_logprob, LmParams, ModelParams, NetError};
use crate::tensor::{dot, Mat};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("a class is empty")]
    EmptyClass,
    #[error("length mismatch: {0} inputs vs {1} outputs")]
    LengthMismatch(usize, usize),
    #[error("missing metric {metric} for setup {setup:?}")]
    MissingMetric { setup: String, metric: &'static str },
    #[error("invalid report: {0}")]
    Invalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const DEFAULT_FUNCTION_WORDS: &str = include_str!("function_words.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionWords(HashSet<String>);

impl Default for FunctionWords {
    fn default() -> Self {
        Self::parse(DEFAULT_FUNCTION_WORDS)
    }
}

impl FunctionWords {
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Self(words.into_iter().map(|w| w.into().to_lowercase()).collect())
    }

    pub fn contains(&self, w: &str) -> bool {
        self.0.contains(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn nonempty<T>(xs: &[T], what: &'static str) -> Result<(), EvalError> {
    if xs.is_empty() {
        Err(EvalError::Empty(what))
    } else {
        Ok(())
    }
}

fn count_tr<P: StylePredictor + ?Sized, S: AsRef<str>>(clf: &P, texts: &[S]) -> usize {
    texts.iter().filter(|t| clf.predict(t.as_ref()) == Style::Tr).count()
}

/// Accuracy in percent with `og_texts` labelled OG and `x_texts` labelled TR.
pub fn accuracy_full<P: StylePredictor + ?Sized, S: AsRef<str>>(
    clf: &P,
    og_texts: &[S],
    x_texts: &[S],
) -> Result<f64, EvalError> {
    nonempty(og_texts, "og texts")?;
    nonempty(x_texts, "x texts")?;
    let og_right = og_texts.len() - count_tr(clf, og_texts);
    let x_right = count_tr(clf, x_texts);
    Ok((og_right + x_right) as f64 / (og_texts.len() + x_texts.len()) as f64 * 100.0)
}

/// Percentage of `x_texts` predicted TR.
pub fn accuracy_half<P: StylePredictor + ?Sized, S: AsRef<str>>(clf: &P, x_texts: &[S]) -> Result<f64, EvalError> {
    nonempty(x_texts, "x texts")?;
    Ok(count_tr(clf, x_texts) as f64 / x_texts.len() as f64 * 100.0)
}

/// Number of `x_texts` predicted OG. Counted from predictions, so
/// `og_like + predicted_tr == |x|` exactly.
pub fn og_like<P: StylePredictor + ?Sized, S: AsRef<str>>(clf: &P, x_texts: &[S]) -> Result<usize, EvalError> {
    nonempty(x_texts, "x texts")?;
    Ok(x_texts.len() - count_tr(clf, x_texts))
}

/// Corpus perplexity: `exp` of the token-weighted mean negative log
/// likelihood, `</s>` included, teacher-forced.
pub fn perplexity<S: AsRef<str>>(lm: &LmParams, tok: &Tokenizer, texts: &[S]) -> Result<f64, EvalError> {
    nonempty(texts, "texts")?;
    let seqs: Vec<TokenSeq> = texts
        .iter()
        .map(|t| tok.encode(t.as_ref()).with_eos(Vocabulary::EOS_ID))
        .collect();
    perplexity_ids(lm, &seqs)
}

pub fn perplexity_ids(lm: &LmParams, seqs: &[TokenSeq]) -> Result<f64, EvalError> {
    nonempty(seqs, "sequences")?;
    let (mut nll, mut n) = (0.0, 0usize);
    for s in seqs {
        let lp = lm_logprob(lm, &clip(s, lm.cfg.max_len))?;
        nll -= lp.iter().sum::<f64>();
        n += lp.len();
    }
    Ok((nll / n as f64).exp())
}

fn clip(s: &TokenSeq, max: usize) -> TokenSeq {
    if s.len() <= max {
        s.clone()
    } else {
        TokenSeq(s[..max].to_vec())
    }
}

fn words<S: AsRef<str>>(texts: &[S]) -> Vec<String> {
    texts
        .iter()
        .flat_map(|t| t.as_ref().split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
        .collect()
}

/// Distinct types over total tokens of the concatenated corpus.
pub fn ttr<S: AsRef<str>>(texts: &[S]) -> Result<f64, EvalError> {
    let w = words(texts);
    nonempty(&w, "tokens")?;
    let types: HashSet<&str> = w.iter().map(String::as_str).collect();
    Ok(types.len() as f64 / w.len() as f64)
}

/// Share of tokens not in the function-word list.
pub fn lexical_density<S: AsRef<str>>(texts: &[S], fw: &FunctionWords) -> Result<f64, EvalError> {
    let w = words(texts);
    nonempty(&w, "tokens")?;
    let content = w.iter().filter(|t| !fw.contains(t)).count();
    Ok(content as f64 / w.len() as f64)
}

pub fn count_identical<S: AsRef<str>, T: AsRef<str>>(inputs: &[S], outputs: &[T]) -> Result<usize, EvalError> {
    if inputs.len() != outputs.len() {
        return Err(EvalError::LengthMismatch(inputs.len(), outputs.len()));
    }
    Ok(inputs
        .iter()
        .zip(outputs)
        .filter(|(a, b)| normalize_ws(a.as_ref()) == normalize_ws(b.as_ref()))
        .count())
}

// Unit-normalised encoder states of `ids + </s>`, without the `</s>` row.
fn token_states(reference: &ModelParams, ids: &TokenSeq) -> Result<Vec<Vec<f64>>, EvalError> {
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let max = reference.cfg.max_len;
    let mut input = ids.with_eos(Vocabulary::EOS_ID);
    input.0.truncate(max);
    let states: Mat = encode(reference, &input)?;
    let n = ids.len().min(states.rows());
    Ok((0..n)
        .map(|r| {
            let row = states.row(r);
            let norm = dot(row, row).sqrt();
            row.iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }).collect()
        })
        .collect())
}

/// Greedy-match F1 between two token-state sequences: each token is
/// matched to its most similar token on the other side. Clamped to [0, 1].
pub fn greedy_match_f1(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let best = |xs: &[Vec<f64>], ys: &[Vec<f64>]| -> f64 {
        xs.iter()
            .map(|x| ys.iter().map(|y| dot(x, y)).fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / xs.len() as f64
    };
    let recall = best(a, b);
    let precision = best(b, a);
    if precision + recall <= 0.0 {
        return 0.0;
    }
    (2.0 * precision * recall / (precision + recall)).clamp(0.0, 1.0)
}

/// Content preservation of one pair under a frozen reference encoder.
pub fn content_f1_ids(reference: &ModelParams, input: &TokenSeq, output: &TokenSeq) -> Result<f64, EvalError> {
    if input.0 == output.0 && !input.is_empty() {
        return Ok(1.0);
    }
    let a = token_states(reference, input)?;
    let b = token_states(reference, output)?;
    Ok(greedy_match_f1(&a, &b))
}

/// Mean pairwise [`content_f1_ids`] over aligned texts.
pub fn content_f1<S: AsRef<str>, T: AsRef<str>>(
    reference: &ModelParams,
    tok: &Tokenizer,
    inputs: &[S],
    outputs: &[T],
) -> Result<f64, EvalError> {
    if inputs.len() != outputs.len() {
        return Err(EvalError::LengthMismatch(inputs.len(), outputs.len()));
    }
    nonempty(inputs, "inputs")?;
    let mut total = 0.0;
    for (a, b) in inputs.iter().zip(outputs) {
        total += content_f1_ids(reference, &tok.encode(a.as_ref()), &tok.encode(b.as_ref()))?;
    }
    Ok(total / inputs.len() as f64)
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One row of the report: the metrics of one system variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRow {
    pub setup: String,
    pub acc_full: f64,
    pub acc_half: f64,
    pub og_like_count: usize,
    pub content_f1: f64,
    pub ppl_og: f64,
    pub ttr: f64,
    pub ld: f64,
    pub n_identical: usize,
}

/// Metric values collected for one setup; all must be present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSet {
    pub acc_full: Option<f64>,
    pub acc_half: Option<f64>,
    pub og_like_count: Option<usize>,
    pub content_f1: Option<f64>,
    pub ppl_og: Option<f64>,
    pub ttr: Option<f64>,
    pub ld: Option<f64>,
    pub n_identical: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub schema_version: u32,
    pub rows: Vec<EvalRow>,
}

fn row_from(setup: &str, m: &MetricSet) -> Result<EvalRow, EvalError> {
    let miss = |metric: &'static str| EvalError::MissingMetric {
        setup: setup.to_string(),
        metric,
    };
    Ok(EvalRow {
        setup: setup.to_string(),
        acc_full: m.acc_full.ok_or_else(|| miss("acc_full"))?,
        acc_half: m.acc_half.ok_or_else(|| miss("acc_half"))?,
        og_like_count: m.og_like_count.ok_or_else(|| miss("og_like_count"))?,
        content_f1: m.content_f1.ok_or_else(|| miss("content_f1"))?,
        ppl_og: m.ppl_og.ok_or_else(|| miss("ppl_og"))?,
        ttr: m.ttr.ok_or_else(|| miss("ttr"))?,
        ld: m.ld.ok_or_else(|| miss("ld"))?,
        n_identical: m.n_identical.ok_or_else(|| miss("n_identical"))?,
    })
}

fn check_row(r: &EvalRow) -> Result<(), EvalError> {
    let bad = |m: String| Err(EvalError::Invalid(format!("{}: {m}", r.setup)));
    for (name, v) in [("acc_full", r.acc_full), ("acc_half", r.acc_half)] {
        if !(0.0..=100.0).contains(&v) {
            return bad(format!("{name} {v} outside [0,100]"));
        }
    }
    for (name, v) in [("content_f1", r.content_f1), ("ttr", r.ttr), ("ld", r.ld)] {
        if !(0.0..=1.0).contains(&v) {
            return bad(format!("{name} {v} outside [0,1]"));
        }
    }
    if !(r.ppl_og >= 1.0) || !r.ppl_og.is_finite() {
        return bad(format!("perplexity {}", r.ppl_og));
    }
    Ok(())
}

/// Rows in the order given.
pub fn build_report(setups: &[(&str, MetricSet)]) -> Result<EvalReport, EvalError> {
    let rows = setups
        .iter()
        .map(|(s, m)| row_from(s, m))
        .collect::<Result<Vec<_>, _>>()?;
    for r in &rows {
        check_row(r)?;
    }
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        rows,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("Setup\tAcc1\tAcc2\tOGlike\tContentF1\tPPL\tTTR\tLD\tNIdentical\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{:.2}\t{:.2}\t{}\t{:.4}\t{:.2}\t{:.4}\t{:.4}\t{}\n",
                r.setup, r.acc_full, r.acc_half, r.og_like_count, r.content_f1, r.ppl_og, r.ttr, r.ld, r.n_identical
            ));
        }
        s
    }
}

/// Parses and checks a JSON report: known fields only, supported schema
/// version, values in range.
pub fn validate_report_json(text: &str) -> Result<EvalReport, EvalError> {
    let report: EvalReport = serde_json::from_str(text)?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(EvalError::Invalid(format!("schema version {}", report.schema_version)));
    }
    for r in &report.rows {
        check_row(r)?;
    }
    Ok(report)
}
