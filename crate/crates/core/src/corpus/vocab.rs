use super::bpe::{BpeModel, END_OF_WORD};
use super::{CorpusError, StyledCorpus};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeSet, HashMap};
use std::ops::Deref;
use std::path::Path;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const MASK: &str = "<mask>";

/// Encoded sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<usize>);

impl TokenSeq {
    pub fn new(ids: Vec<usize>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    /// Copy with `eos` appended.
    pub fn with_eos(&self, eos: usize) -> TokenSeq {
        let mut ids = self.0.clone();
        ids.push(eos);
        TokenSeq(ids)
    }

    /// Copy with a trailing `eos` removed, if present.
    pub fn strip_eos(&self, eos: usize) -> TokenSeq {
        let mut ids = self.0.clone();
        if ids.last() == Some(&eos) {
            ids.pop();
        }
        TokenSeq(ids)
    }
}

impl Deref for TokenSeq {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for TokenSeq {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Shared sub-word inventory with five special tokens at ids 0..5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const BOS_ID: usize = 1;
    pub const EOS_ID: usize = 2;
    pub const UNK_ID: usize = 3;
    pub const MASK_ID: usize = 4;

    /// Specials, then the sorted character alphabet and the end-of-word
    /// marker, then one entry per merge in learning order.
    pub fn build(bpe: &BpeModel, corpora: &[&StyledCorpus]) -> Self {
        let alphabet: BTreeSet<char> = corpora
            .iter()
            .flat_map(|c| c.sentences.iter())
            .flat_map(|s| s.chars())
            .filter(|c| !c.is_whitespace())
            .collect();
        let mut tokens: Vec<String> = [PAD, BOS, EOS, UNK, MASK].iter().map(|s| s.to_string()).collect();
        tokens.extend(alphabet.into_iter().map(String::from));
        tokens.push(END_OF_WORD.to_string());
        tokens.extend(bpe.merges().iter().map(|(l, r)| format!("{l}{r}")));
        Self::from_tokens(tokens).expect("built vocabulary is well-formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CorpusError> {
        let specials = [PAD, BOS, EOS, UNK, MASK];
        if tokens.len() < specials.len() || tokens.iter().zip(specials).any(|(t, s)| t != s) {
            return Err(CorpusError::BadVocab("special tokens must come first".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut dedup = Vec::with_capacity(tokens.len());
        for t in tokens {
            if !index.contains_key(&t) {
                index.insert(t.clone(), dedup.len());
                dedup.push(t);
            }
        }
        Ok(Self { tokens: dedup, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: usize) -> bool {
        id <= Self::MASK_ID
    }

    /// SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut body = self.tokens.join("\n");
        body.push('\n');
        std::fs::write(path, body).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_tokens(text.lines().map(String::from).collect())
    }
}

/// Words containing a character outside the vocabulary collapse to one
/// `<unk>`.
pub fn encode(vocab: &Vocabulary, bpe: &BpeModel, text: &str) -> TokenSeq {
    let mut ids = Vec::new();
    for word in text.split_whitespace() {
        if word.chars().any(|c| vocab.id(c.encode_utf8(&mut [0; 4])).is_none()) {
            ids.push(Vocabulary::UNK_ID);
            continue;
        }
        for sym in bpe.segment(word) {
            ids.push(vocab.id(&sym).unwrap_or(Vocabulary::UNK_ID));
        }
    }
    TokenSeq(ids)
}

/// Inverse of [`encode`]; `<pad>`, `<s>` and `</s>` are dropped.
pub fn decode(vocab: &Vocabulary, ids: &[usize]) -> String {
    let mut out = String::new();
    for &id in ids {
        match id {
            Vocabulary::PAD_ID | Vocabulary::BOS_ID | Vocabulary::EOS_ID => {}
            Vocabulary::UNK_ID | Vocabulary::MASK_ID => {
                out.push_str(vocab.token(id).unwrap_or(UNK));
                out.push(' ');
            }
            _ => match vocab.token(id) {
                Some(tok) => {
                    if let Some(stem) = tok.strip_suffix(END_OF_WORD) {
                        out.push_str(stem);
                        out.push(' ');
                    } else {
                        out.push_str(tok);
                    }
                }
                None => {
                    out.push_str(UNK);
                    out.push(' ');
                }
            },
        }
    }
    super::normalize_ws(&out)
}

/// Vocabulary and merges bundled together.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    pub vocab: Vocabulary,
    pub bpe: BpeModel,
}

impl Tokenizer {
    pub fn new(vocab: Vocabulary, bpe: BpeModel) -> Self {
        Self { vocab, bpe }
    }

    /// Learns merges over `corpora` and builds the matching vocabulary.
    pub fn train(corpora: &[&StyledCorpus], merges: usize) -> Result<Self, CorpusError> {
        let bpe = super::learn_bpe(corpora, merges)?;
        let vocab = Vocabulary::build(&bpe, corpora);
        Ok(Self { vocab, bpe })
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        encode(&self.vocab, &self.bpe, text)
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        decode(&self.vocab, ids)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}
