use super::{CorpusError, StyledCorpus};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

/// Word-boundary symbol appended to every word before merging.
pub const END_OF_WORD: &str = "</w>";

/// Ordered byte-pair merges, in the order they were learned.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Self { merges, ranks }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    /// Segments a single word (no whitespace) into sub-word symbols, the last
    /// of which carries or is the end-of-word marker.
    pub fn segment(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        symbols.push(END_OF_WORD.to_string());
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == left && &symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// One merge per line as `left right`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(CorpusError::BadBpeLine {
                        line: i + 1,
                        content: line.to_string(),
                    })
                }
            }
        }
        Ok(Self::from_merges(merges))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_text()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }
}

/// Learns up to `merges` merge operations over the whitespace-split words of
/// all corpora. Each step merges the most frequent adjacent pair; ties go to
/// the lexicographically smallest `(left, right)`.
pub fn learn_bpe(corpora: &[&StyledCorpus], merges: usize) -> Result<BpeModel, CorpusError> {
    if corpora.is_empty() || corpora.iter().all(|c| c.is_empty()) {
        return Err(CorpusError::NoCorpora);
    }
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for c in corpora {
        for s in &c.sentences {
            for w in s.split_whitespace() {
                *freq.entry(w).or_default() += 1;
            }
        }
    }
    let mut words: Vec<(Vec<String>, usize)> = freq
        .into_iter()
        .map(|(w, n)| {
            let mut syms: Vec<String> = w.chars().map(String::from).collect();
            syms.push(END_OF_WORD.to_string());
            (syms, n)
        })
        .collect();

    let mut learned = Vec::with_capacity(merges);
    while learned.len() < merges {
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, n) in &words {
            for w in syms.windows(2) {
                *counts.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
            }
        }
        let Some((pair, _)) = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
        else {
            break;
        };
        let (left, right) = (pair.0.to_string(), pair.1.to_string());
        let joined = format!("{left}{right}");
        for (syms, _) in &mut words {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            *syms = out;
        }
        learned.push((left, right));
    }
    Ok(BpeModel::from_merges(learned))
}
