//! Mono-stylistic corpora: loading, BPE sub-word vocabulary, and the noise
//! used for denoising-autoencoder pretraining.

mod bpe;
mod noise;
mod vocab;

pub use bpe::{learn_bpe, BpeModel, END_OF_WORD};
pub use noise::{make_noisy, NoiseConfig};
pub use vocab::{decode, encode, TokenSeq, Tokenizer, Vocabulary};

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus file not found: {0}")]
    Missing(PathBuf),
    #[error("{path}: line {line} is not valid UTF-8")]
    NotUtf8 { path: PathBuf, line: usize },
    #[error("empty corpus: {0}")]
    Empty(PathBuf),
    #[error("no corpora given")]
    NoCorpora,
    #[error("invalid noise config: {0}")]
    InvalidNoise(String),
    #[error("malformed BPE model at line {line}: {content:?}")]
    BadBpeLine { line: usize, content: String },
    #[error("malformed vocabulary: {0}")]
    BadVocab(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    /// Original, i.e. the target style.
    Og,
    /// Translated.
    Tr,
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Style::Og => f.write_str("og"),
            Style::Tr => f.write_str("tr"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Natural,
    Synthetic,
    MtrSurrogate,
}

/// Deduplicated sentences sharing one style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyledCorpus {
    pub sentences: Vec<String>,
    pub style: Style,
    pub provenance: Provenance,
}

impl StyledCorpus {
    /// Builds a corpus, normalizing whitespace and dropping blank lines and
    /// repeated sentences (first occurrence wins).
    pub fn new<I, S>(sentences: I, style: Style, provenance: Provenance) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for s in sentences {
            let norm = normalize_ws(s.as_ref());
            if norm.is_empty() {
                continue;
            }
            if seen.insert(norm.clone()) {
                out.push(norm);
            }
        }
        Self {
            sentences: out,
            style,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn encode_all(&self, tok: &Tokenizer) -> Vec<TokenSeq> {
        self.sentences.iter().map(|s| tok.encode(s)).collect()
    }

    /// Writes one sentence per line.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut body = self.sentences.join("\n");
        body.push('\n');
        std::fs::write(path, body).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reads a UTF-8 file with one sentence per line.
pub fn load_corpus(path: &Path, style: Style) -> Result<StyledCorpus, CorpusError> {
    load_corpus_with(path, style, Provenance::Natural)
}

pub fn load_corpus_with(
    path: &Path,
    style: Style,
    provenance: Provenance,
) -> Result<StyledCorpus, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CorpusError::Missing(path.to_path_buf())
        } else {
            CorpusError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    let mut lines = Vec::new();
    for (i, raw) in bytes.split(|b| *b == b'\n').enumerate() {
        let line = std::str::from_utf8(raw).map_err(|_| CorpusError::NotUtf8 {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        lines.push(line.trim_end_matches('\r'));
    }
    let corpus = StyledCorpus::new(lines, style, provenance);
    if corpus.is_empty() {
        return Err(CorpusError::Empty(path.to_path_buf()));
    }
    Ok(corpus)
}
