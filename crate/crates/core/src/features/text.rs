//! Bag-of-words tokenization and vocabulary construction.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static PUNCTUATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{P}").expect("punctuation regex"));

const DUTCH_STOPWORDS: &str = include_str!("../../data/stopwords_nl.txt");

/// Lowercased, punctuation-free whitespace tokens with stopwords removed.
pub fn tokenize(text: &str, stopwords: &HashSet<String>) -> Vec<String> {
    let lowered = text.to_lowercase();
    let stripped = PUNCTUATION.replace_all(&lowered, "");
    stripped
        .split_whitespace()
        .filter(|t| !stopwords.contains(*t))
        .map(str::to_string)
        .collect()
}

/// Parses a stopword list: one token per line, blank lines ignored.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&text))
}

/// The shipped Dutch stopword list.
pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(DUTCH_STOPWORDS)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Ordered by descending document frequency, ties lexicographic.
    pub tokens: Vec<String>,
    pub doc_freq: Vec<u64>,
    /// Sorted stopword list used during construction and tokenization.
    pub stopwords: Vec<String>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn stopword_set(&self) -> HashSet<String> {
        self.stopwords.iter().cloned().collect()
    }
}

pub const DEFAULT_VOCABULARY_SIZE: usize = 413;

/// Keeps the `size` tokens with the highest document frequency.
///
/// Returns every distinct token (with a warning) when fewer than `size` exist.
pub fn build_vocabulary<'a, I>(texts: I, size: usize, stopwords: &HashSet<String>) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if size == 0 {
        return Err(Error::Vocabulary("size must be at least 1".into()));
    }
    let mut df: HashMap<String, u64> = HashMap::new();
    let mut docs = 0usize;
    for text in texts {
        docs += 1;
        let distinct: BTreeSet<String> = tokenize(text, stopwords).into_iter().collect();
        for t in distinct {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    if docs == 0 {
        return Err(Error::Vocabulary("no training texts".into()));
    }
    let mut ranked: Vec<(String, u64)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if ranked.len() < size {
        log::warn!("vocabulary: only {} distinct tokens available, requested {size}", ranked.len());
    }
    ranked.truncate(size);
    let mut stop: Vec<String> = stopwords.iter().cloned().collect();
    stop.sort();
    let (tokens, doc_freq) = ranked.into_iter().unzip();
    Ok(Vocabulary {
        tokens,
        doc_freq,
        stopwords: stop,
    })
}

/// Precomputed token lookup for repeated bag-of-words encoding.
#[derive(Debug, Clone)]
pub struct BowEncoder {
    index: HashMap<String, usize>,
    stopwords: HashSet<String>,
    len: usize,
}

impl BowEncoder {
    pub fn new(vocab: &Vocabulary) -> Self {
        Self {
            index: vocab.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect(),
            stopwords: vocab.stopword_set(),
            len: vocab.len(),
        }
    }

    pub fn encode_into(&self, text: &str, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len);
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in tokenize(text, &self.stopwords) {
            if let Some(&i) = self.index.get(&t) {
                out[i] += 1.0;
            }
        }
    }
}

/// Raw per-token occurrence counts in vocabulary order.
pub fn bow_vector(text: &str, vocab: &Vocabulary) -> Vec<f64> {
    let mut out = vec![0.0; vocab.len()];
    BowEncoder::new(vocab).encode_into(text, &mut out);
    out
}
