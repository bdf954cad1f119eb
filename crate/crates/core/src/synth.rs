//! Synthetic OG/TR corpora with a known alignment.
//!
//! OG sentences come from a small subject-verb-object grammar. TR sentences
//! are OG sentences passed through a [`StyleTransform`] that swaps words for
//! marked synonyms, rewrites connectives and inserts filler words. Marked
//! words and fillers never occur in OG text, so every transform can be
//! undone exactly.

use crate::corpus::{Provenance, Style, StyledCorpus};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("degenerate grammar: {0}")]
    DegenerateGrammar(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("grammar too small to produce {wanted} distinct sentences (got {got})")]
    Exhausted { wanted: usize, got: usize },
    #[error("bad alignment line {line}: {text:?}")]
    BadAlignment { line: usize, text: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const NOUNS: &[&str] = &[
    "council", "member", "report", "committee", "country", "citizen", "market", "farmer", "worker", "company",
    "government", "region", "city", "school", "teacher", "student", "doctor", "patient", "river", "forest",
    "village", "minister", "budget", "plan", "law", "court", "judge", "bank", "product", "price",
    "family", "child", "house", "road", "bridge", "train", "station", "letter", "question", "answer",
    "program", "project", "agency", "union", "treaty", "border", "harbour", "factory", "museum", "library",
    "hospital", "parliament", "president", "voter", "election", "debate", "proposal", "decision", "agreement", "policy",
    "industry", "energy", "network", "system", "problem", "solution", "crisis", "reform", "tax", "fund",
];

/// Third-person present verbs.
const VERBS: &[&str] = &[
    "supports", "rejects", "helps", "needs", "shows", "starts", "ends", "uses", "builds", "buys",
    "asks", "gets", "keeps", "finds", "tells", "gives", "makes", "wants", "checks", "sees",
    "visits", "meets", "follows", "changes", "protects", "opens", "closes", "writes", "reads", "sells",
    "funds", "plans", "joins", "leaves", "moves", "trusts", "fears", "loves", "holds", "calls",
];

const ADJECTIVES: &[&str] = &[
    "good", "big", "small", "important", "new", "old", "clear", "hard", "quick", "strong",
    "poor", "rich", "young", "local", "public", "green", "open", "safe", "fair", "large",
    "modern", "simple", "serious", "common", "free", "main", "central", "early", "late", "happy",
    "busy", "quiet", "cheap", "dark", "bright", "short", "long", "high", "low", "warm",
];

const ADVERBS: &[&str] = &[
    "often", "never", "rarely", "quickly", "slowly", "openly", "firmly", "gladly", "usually", "soon",
    "always", "seldom", "clearly", "simply", "finally",
];

const DETERMINERS: &[&str] = &["the", "a", "this", "that", "every", "our"];
const PREPOSITIONS: &[&str] = &["in", "on", "with", "for", "near", "after", "before", "about"];
const CONNECTIVES: &[&str] = &["and", "but", "so", "because", "while"];

const MARKED_VERBS: &[(&str, &str)] = &[
    ("supports", "endorses"),
    ("rejects", "declines"),
    ("helps", "assists"),
    ("needs", "requires"),
    ("shows", "demonstrates"),
    ("starts", "commences"),
    ("ends", "terminates"),
    ("uses", "utilises"),
    ("builds", "constructs"),
    ("buys", "purchases"),
    ("asks", "inquires"),
    ("gets", "obtains"),
    ("keeps", "retains"),
    ("finds", "discovers"),
    ("tells", "informs"),
    ("gives", "provides"),
    ("makes", "produces"),
    ("wants", "desires"),
    ("checks", "verifies"),
    ("sees", "observes"),
    ("visits", "tours"),
    ("meets", "encounters"),
    ("follows", "pursues"),
    ("changes", "alters"),
    ("protects", "safeguards"),
    ("opens", "unlocks"),
    ("closes", "shuts"),
    ("writes", "composes"),
    ("reads", "peruses"),
    ("sells", "markets"),
    ("funds", "finances"),
    ("plans", "schedules"),
    ("joins", "enters"),
    ("leaves", "departs"),
    ("moves", "relocates"),
    ("trusts", "believes"),
    ("fears", "dreads"),
    ("loves", "adores"),
    ("holds", "grips"),
    ("calls", "summons"),
];

const MARKED_ADJECTIVES: &[(&str, &str)] = &[
    ("good", "beneficial"),
    ("big", "substantial"),
    ("small", "minor"),
    ("important", "significant"),
    ("new", "novel"),
    ("old", "former"),
    ("clear", "evident"),
    ("hard", "difficult"),
    ("quick", "rapid"),
    ("strong", "robust"),
    ("poor", "deprived"),
    ("rich", "affluent"),
];

const MARKED_CONNECTIVES: &[(&str, &str)] = &[
    ("but", "however"),
    ("so", "therefore"),
    ("because", "since"),
    ("while", "whereas"),
];

const FILLERS: &[&str] = &["indeed", "moreover", "furthermore", "also"];

/// Word-class sizes for the template grammar; each list is a prefix of the
/// built-in word list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrammarSize {
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub adverbs: usize,
    pub templates: usize,
}

impl Default for GrammarSize {
    fn default() -> Self {
        Self {
            nouns: NOUNS.len(),
            verbs: VERBS.len(),
            adjectives: ADJECTIVES.len(),
            adverbs: ADVERBS.len(),
            templates: TEMPLATES.len(),
        }
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Np,
    NpPlain,
    Verb,
    Adverb,
    Prep,
    Conn,
    Lit(&'static str),
}

use Slot::*;

const TEMPLATES: &[&[Slot]] = &[
    &[Np, Verb, Np, Lit(".")],
    &[Np, Adverb, Verb, Np, Lit(".")],
    &[Np, Verb, Np, Prep, NpPlain, Lit(".")],
    &[Np, Verb, Np, Conn, Np, Verb, NpPlain, Lit(".")],
    &[Prep, NpPlain, Lit(","), Np, Verb, Np, Lit(".")],
    &[NpPlain, Verb, NpPlain, Conn, NpPlain, Adverb, Verb, NpPlain, Prep, NpPlain, Lit(".")],
];

const MIN_LEN: usize = 5;
const MAX_LEN: usize = 20;

struct Grammar {
    nouns: Vec<&'static str>,
    verbs: Vec<&'static str>,
    adjectives: Vec<&'static str>,
    adverbs: Vec<&'static str>,
    templates: Vec<&'static [Slot]>,
}

impl Grammar {
    fn new(size: &GrammarSize) -> Result<Self, SynthError> {
        if size.templates == 0 {
            return Err(SynthError::DegenerateGrammar("no templates".into()));
        }
        if size.nouns == 0 || size.verbs == 0 {
            return Err(SynthError::DegenerateGrammar("nouns and verbs must be non-empty".into()));
        }
        let take = |list: &[&'static str], n: usize| list[..n.min(list.len())].to_vec();
        let mut templates: Vec<&'static [Slot]> = TEMPLATES[..size.templates.min(TEMPLATES.len())].to_vec();
        if size.adverbs == 0 {
            templates.retain(|t| !t.iter().any(|s| matches!(s, Adverb)));
            if templates.is_empty() {
                return Err(SynthError::DegenerateGrammar("every template needs an adverb".into()));
            }
        }
        Ok(Self {
            nouns: take(NOUNS, size.nouns),
            verbs: take(VERBS, size.verbs),
            adjectives: take(ADJECTIVES, size.adjectives),
            adverbs: take(ADVERBS, size.adverbs),
            templates,
        })
    }

    fn noun_phrase(&self, rng: &mut ChaCha8Rng, allow_adj: bool, out: &mut Vec<&'static str>) {
        out.push(DETERMINERS[rng.random_range(0..DETERMINERS.len())]);
        if allow_adj && !self.adjectives.is_empty() && rng.random_bool(0.4) {
            out.push(self.adjectives[rng.random_range(0..self.adjectives.len())]);
        }
        out.push(self.nouns[rng.random_range(0..self.nouns.len())]);
    }

    fn sentence(&self, rng: &mut ChaCha8Rng) -> String {
        let tpl = self.templates[rng.random_range(0..self.templates.len())];
        let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| xs[rng.random_range(0..xs.len())];
        let mut words = Vec::with_capacity(MAX_LEN);
        for slot in tpl {
            match slot {
                Np => self.noun_phrase(rng, true, &mut words),
                NpPlain => self.noun_phrase(rng, false, &mut words),
                Verb => words.push(pick(rng, &self.verbs)),
                Adverb => words.push(pick(rng, &self.adverbs)),
                Prep => words.push(pick(rng, PREPOSITIONS)),
                Conn => words.push(pick(rng, CONNECTIVES)),
                Lit(s) => words.push(s),
            }
        }
        debug_assert!((MIN_LEN..=MAX_LEN).contains(&words.len()));
        words.join(" ")
    }
}

/// Every word the grammar can emit at full size.
pub fn og_lexicon() -> BTreeSet<&'static str> {
    NOUNS
        .iter()
        .chain(VERBS)
        .chain(ADJECTIVES)
        .chain(ADVERBS)
        .chain(DETERMINERS)
        .chain(PREPOSITIONS)
        .chain(CONNECTIVES)
        .chain([".", ","].iter())
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleTransform {
    pub swaps: BTreeMap<String, String>,
    pub filler_prob: f64,
    pub connectives: BTreeMap<String, String>,
    pub seed: u64,
}

impl StyleTransform {
    pub fn identity(seed: u64) -> Self {
        Self {
            swaps: BTreeMap::new(),
            filler_prob: 0.0,
            connectives: BTreeMap::new(),
            seed,
        }
    }

    /// The default translationese surrogate.
    pub fn marker(seed: u64) -> Self {
        let own = |pairs: &[(&str, &str)]| -> BTreeMap<String, String> {
            pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
        };
        let mut swaps = own(MARKED_VERBS);
        swaps.extend(own(MARKED_ADJECTIVES));
        Self {
            swaps,
            filler_prob: 0.3,
            connectives: own(MARKED_CONNECTIVES),
            seed,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.swaps.is_empty() && self.connectives.is_empty() && self.filler_prob == 0.0
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.filler_prob) {
            return Err(SynthError::Invalid(format!("filler probability {}", self.filler_prob)));
        }
        let mut seen = HashSet::new();
        for v in self.swaps.values().chain(self.connectives.values()) {
            if !seen.insert(v.as_str()) {
                return Err(SynthError::Invalid(format!("{v:?} is the image of two words")));
            }
        }
        for k in self.swaps.keys() {
            if self.connectives.contains_key(k) {
                return Err(SynthError::Invalid(format!("{k:?} is in both tables")));
            }
        }
        Ok(())
    }

    fn lookup<'a>(&'a self, w: &'a str) -> &'a str {
        self.swaps
            .get(w)
            .or_else(|| self.connectives.get(w))
            .map(String::as_str)
            .unwrap_or(w)
    }

    /// Table substitution only, no fillers.
    pub fn substitute(&self, sentence: &str) -> String {
        sentence
            .split_whitespace()
            .map(|w| self.lookup(w))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Substitution followed by at most one filler, inserted before any
    /// word except the first with probability `filler_prob`.
    pub fn apply(&self, sentence: &str, rng: &mut ChaCha8Rng) -> String {
        let mut words: Vec<&str> = sentence.split_whitespace().map(|w| self.lookup(w)).collect();
        if self.filler_prob > 0.0 && words.len() > 1 && rng.random_bool(self.filler_prob) {
            let at = rng.random_range(1..words.len());
            let f = FILLERS[rng.random_range(0..FILLERS.len())];
            words.insert(at, f);
        }
        words.join(" ")
    }

    /// Undo [`apply`](Self::apply): drops fillers and maps marked words back.
    pub fn invert(&self, sentence: &str) -> String {
        let inverse: BTreeMap<&str, &str> = self
            .swaps
            .iter()
            .chain(&self.connectives)
            .map(|(k, v)| (v.as_str(), k.as_str()))
            .collect();
        sentence
            .split_whitespace()
            .filter(|w| !FILLERS.contains(w))
            .map(|w| inverse.get(w).copied().unwrap_or(w))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Maps each TR sentence index to the OG sentence it was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OracleAlignment {
    pub tr_to_og: Vec<usize>,
}

impl OracleAlignment {
    pub fn og_of(&self, tr: usize) -> Option<usize> {
        self.tr_to_og.get(tr).copied()
    }

    pub fn len(&self) -> usize {
        self.tr_to_og.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tr_to_og.is_empty()
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = HashSet::new();
        self.tr_to_og.iter().all(|og| seen.insert(*og))
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for (tr, og) in self.tr_to_og.iter().enumerate() {
            writeln!(f, "{tr} {og}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path)?;
        let mut tr_to_og = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = || SynthError::BadAlignment {
                line: i + 1,
                text: line.to_string(),
            };
            let mut parts = line.split_whitespace();
            let tr: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let og: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if tr != tr_to_og.len() || parts.next().is_some() {
                return Err(bad());
            }
            tr_to_og.push(og);
        }
        Ok(Self { tr_to_og })
    }
}

/// Samples `n_og` distinct OG sentences, then builds TR from a shuffled
/// subset of them. Sources are drawn without replacement while possible;
/// TR strings that repeat an earlier one are dropped, so TR may come out
/// shorter than `n_tr` when `n_tr > n_og`.
pub fn gen_synthetic(
    grammar: &GrammarSize,
    n_og: usize,
    n_tr: usize,
    transform: &StyleTransform,
) -> Result<(StyledCorpus, StyledCorpus, OracleAlignment), SynthError> {
    if n_og == 0 || n_tr == 0 {
        return Err(SynthError::Invalid("n_og and n_tr must be positive".into()));
    }
    transform.validate()?;
    let g = Grammar::new(grammar)?;
    let mut rng = ChaCha8Rng::seed_from_u64(transform.seed);

    let mut og = Vec::with_capacity(n_og);
    let mut seen = HashSet::with_capacity(n_og);
    let budget = 50 * n_og + 1000;
    let mut attempts = 0;
    while og.len() < n_og {
        attempts += 1;
        if attempts > budget {
            return Err(SynthError::Exhausted {
                wanted: n_og,
                got: og.len(),
            });
        }
        let s = g.sentence(&mut rng);
        if seen.insert(s.clone()) {
            og.push(s);
        }
    }

    let mut sources: Vec<usize> = (0..n_og).collect();
    sources.shuffle(&mut rng);
    sources.truncate(n_tr);
    while sources.len() < n_tr {
        sources.push(rng.random_range(0..n_og));
    }

    let mut tr = Vec::with_capacity(n_tr);
    let mut tr_to_og = Vec::with_capacity(n_tr);
    let mut tr_seen = HashSet::with_capacity(n_tr);
    for src in sources {
        let s = transform.apply(&og[src], &mut rng);
        if tr_seen.insert(s.clone()) {
            tr.push(s);
            tr_to_og.push(src);
        }
    }

    let og = StyledCorpus::new(og, Style::Og, Provenance::Synthetic);
    let tr = StyledCorpus::new(tr, Style::Tr, Provenance::Synthetic);
    debug_assert_eq!(tr.len(), tr_to_og.len());
    Ok((og, tr, OracleAlignment { tr_to_og }))
}

/// Machine-translationese surrogate aligned 1:1 with `og`: the transform
/// followed by replacing each token, with probability `noise`, by a
/// different token drawn from the corpus word list. Not deduplicated, so
/// line `i` always corresponds to `og` line `i`.
pub fn gen_mtr(og: &StyledCorpus, transform: &StyleTransform, noise: f64) -> Result<StyledCorpus, SynthError> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(SynthError::Invalid(format!("noise {noise} outside [0,1]")));
    }
    transform.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(transform.seed ^ 0x6d74_72);
    let pool: Vec<String> = og
        .sentences
        .iter()
        .flat_map(|s| s.split_whitespace())
        .map(|w| transform.lookup(w).to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let sentences = og
        .sentences
        .iter()
        .map(|s| {
            let t = transform.apply(s, &mut rng);
            if noise == 0.0 {
                return t;
            }
            t.split_whitespace()
                .map(|w| {
                    if pool.len() > 1 && rng.random_bool(noise) {
                        perturb(w, &pool, &mut rng)
                    } else {
                        w.to_string()
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    Ok(StyledCorpus {
        sentences,
        style: Style::Tr,
        provenance: Provenance::MtrSurrogate,
    })
}

fn perturb(word: &str, pool: &[String], rng: &mut ChaCha8Rng) -> String {
    loop {
        let cand = &pool[rng.random_range(0..pool.len())];
        if cand != word {
            return cand.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_transform_copies_sources() {
        let (og, tr, al) = gen_synthetic(&GrammarSize::default(), 50, 30, &StyleTransform::identity(3)).unwrap();
        assert_eq!(tr.len(), 30);
        for (i, s) in tr.sentences.iter().enumerate() {
            assert_eq!(s, &og.sentences[al.og_of(i).unwrap()]);
        }
        assert!(al.is_injective());
    }

    #[test]
    fn swap_is_table_lookup() {
        let mut t = StyleTransform::identity(0);
        t.swaps.insert("good".into(), "beneficial".into());
        assert_eq!(t.substitute("this is good ."), "this is beneficial .");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(t.apply("this is good .", &mut rng), "this is beneficial .");
    }

    #[test]
    fn generation_is_reproducible() {
        let t = StyleTransform::marker(17);
        let a = gen_synthetic(&GrammarSize::default(), 100, 100, &t).unwrap();
        let b = gen_synthetic(&GrammarSize::default(), 100, 100, &t).unwrap();
        assert_eq!(a.0.sentences.join("\n"), b.0.sentences.join("\n"));
        assert_eq!(a.1.sentences.join("\n"), b.1.sentences.join("\n"));
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn sentence_lengths_in_range() {
        let (og, _, _) = gen_synthetic(&GrammarSize::default(), 2000, 1, &StyleTransform::identity(5)).unwrap();
        for s in &og.sentences {
            let n = s.split_whitespace().count();
            assert!((MIN_LEN..=MAX_LEN).contains(&n), "{s}");
        }
        let vocab: BTreeSet<&str> = og.sentences.iter().flat_map(|s| s.split_whitespace()).collect();
        assert!(vocab.len() > 150 && vocab.len() <= og_lexicon().len());
    }

    #[test]
    fn degenerate_grammar_is_rejected() {
        let g = GrammarSize {
            templates: 0,
            ..Default::default()
        };
        assert!(matches!(
            gen_synthetic(&g, 5, 5, &StyleTransform::identity(0)),
            Err(SynthError::DegenerateGrammar(_))
        ));
        assert!(gen_synthetic(&GrammarSize::default(), 0, 5, &StyleTransform::identity(0)).is_err());
    }

    #[test]
    fn tiny_grammar_runs_out() {
        let g = GrammarSize {
            nouns: 1,
            verbs: 1,
            adjectives: 0,
            adverbs: 0,
            templates: 1,
        };
        assert!(matches!(
            gen_synthetic(&g, 100, 5, &StyleTransform::identity(0)),
            Err(SynthError::Exhausted { .. })
        ));
    }

    #[test]
    fn marker_words_are_outside_og_lexicon() {
        let lex = og_lexicon();
        let t = StyleTransform::marker(0);
        t.validate().unwrap();
        for v in t.swaps.values().chain(t.connectives.values()) {
            assert!(!lex.contains(v.as_str()), "{v}");
        }
        for f in FILLERS {
            assert!(!lex.contains(f));
        }
    }

    #[test]
    fn inversion_recovers_sources() {
        for filler in [0.0, 0.5] {
            let t = StyleTransform {
                filler_prob: filler,
                ..StyleTransform::marker(9)
            };
            let (og, tr, al) = gen_synthetic(&GrammarSize::default(), 300, 200, &t).unwrap();
            for (i, s) in tr.sentences.iter().enumerate() {
                assert_eq!(t.invert(s), og.sentences[al.og_of(i).unwrap()]);
            }
        }
    }

    #[test]
    fn marker_swaps_cover_enough_tokens() {
        let t = StyleTransform::marker(2);
        let (og, _, _) = gen_synthetic(&GrammarSize::default(), 1000, 1, &t).unwrap();
        let (mut total, mut hit) = (0usize, 0usize);
        for s in &og.sentences {
            for w in s.split_whitespace() {
                total += 1;
                hit += usize::from(t.swaps.contains_key(w) || t.connectives.contains_key(w));
            }
        }
        assert!(hit as f64 / total as f64 >= 0.10, "{hit}/{total}");
    }

    #[test]
    fn mtr_without_noise_is_the_transform() {
        let (og, _, _) = gen_synthetic(&GrammarSize::default(), 200, 1, &StyleTransform::identity(4)).unwrap();
        let same = gen_mtr(&og, &StyleTransform::identity(4), 0.0).unwrap();
        assert_eq!(same.sentences, og.sentences);
        assert_eq!(same.provenance, Provenance::MtrSurrogate);
        let t = StyleTransform {
            filler_prob: 0.0,
            ..StyleTransform::marker(4)
        };
        let swapped = gen_mtr(&og, &t, 0.0).unwrap();
        let want: Vec<String> = og.sentences.iter().map(|s| t.substitute(s)).collect();
        assert_eq!(swapped.sentences, want);
    }

    #[test]
    fn mtr_noise_rate() {
        let (og, _, _) = gen_synthetic(&GrammarSize::default(), 1500, 1, &StyleTransform::identity(8)).unwrap();
        let t = StyleTransform::identity(8);
        let noisy = gen_mtr(&og, &t, 0.1).unwrap();
        let (mut total, mut changed) = (0usize, 0usize);
        for (a, b) in og.sentences.iter().zip(&noisy.sentences) {
            let (a, b): (Vec<_>, Vec<_>) = (a.split_whitespace().collect(), b.split_whitespace().collect());
            assert_eq!(a.len(), b.len());
            total += a.len();
            changed += a.iter().zip(&b).filter(|(x, y)| x != y).count();
        }
        assert!(total >= 10_000);
        let rate = changed as f64 / total as f64;
        assert!((rate - 0.1).abs() <= 0.02, "{rate}");
        assert!(gen_mtr(&og, &t, 1.5).is_err());
    }

    #[test]
    fn alignment_round_trip() {
        let al = OracleAlignment {
            tr_to_og: vec![4, 0, 2],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("align.txt");
        al.save(&p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "0 4\n1 0\n2 2\n");
        assert_eq!(OracleAlignment::load(&p).unwrap(), al);
        fs::write(&p, "0 1\n2 3\n").unwrap();
        assert!(OracleAlignment::load(&p).is_err());
    }
}
