//! Heuristic difficulty signals: length, word rarity and lexical overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Dataset, Example};

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "did", "do", "does", "for", "from", "had",
    "has", "have", "he", "her", "his", "how", "i", "in", "is", "it", "its", "of", "on", "or",
    "she", "that", "the", "their", "they", "this", "to", "was", "were", "what", "when", "where",
    "which", "who", "whom", "why", "will", "with", "you",
];

pub fn default_stopwords() -> BTreeSet<String> {
    STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// One stopword per line; blank lines and `#` comments are skipped.
pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}

/// Token count, or the number of nonzero features when the example has no tokens.
pub fn signal_length(ex: &Example) -> f64 {
    match &ex.text_tokens {
        Some(tokens) => tokens.len() as f64,
        None => ex.features.iter().filter(|&&x| x != 0.0).count() as f64,
    }
}

/// Unigram counts over a tokenised corpus.
#[derive(Debug, Clone, Default)]
pub struct CorpusStats {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl CorpusStats {
    pub fn from_tokens<'a, I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut stats = CorpusStats::default();
        for sentence in sentences {
            for t in sentence {
                *stats.counts.entry(t.as_ref().to_string()).or_default() += 1;
                stats.total += 1;
            }
        }
        stats
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        Self::from_tokens(
            ds.examples()
                .iter()
                .filter_map(|e| e.text_tokens.as_deref()),
        )
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    /// Relative frequency; unseen tokens get `1 / (total + vocab_size)`.
    pub fn relative_frequency(&self, token: &str) -> f64 {
        match self.counts.get(token) {
            Some(&c) => c as f64 / self.total as f64,
            None => 1.0 / (self.total as f64 + self.counts.len() as f64).max(1.0),
        }
    }
}

/// `−Σ log p̂(w)` over the example's tokens.
pub fn signal_word_rarity(corpus: &CorpusStats, ex: &Example) -> f64 {
    ex.text_tokens
        .as_deref()
        .unwrap_or_default()
        .iter()
        .map(|t| -corpus.relative_frequency(t).ln())
        .sum()
}

/// Fraction of the query's non-stopword token types that also occur in the context.
pub fn signal_lexical_overlap<S: AsRef<str>>(
    query: &[S],
    context: &[S],
    stopwords: &BTreeSet<String>,
) -> Result<f64> {
    let q: BTreeSet<&str> = query
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !stopwords.contains(*t))
        .collect();
    if q.is_empty() {
        return Err(Error::UndefinedSignal(
            "query has no tokens left after stopword removal".to_string(),
        ));
    }
    let c: BTreeSet<&str> = context.iter().map(AsRef::as_ref).collect();
    Ok(q.intersection(&c).count() as f64 / q.len() as f64)
}
