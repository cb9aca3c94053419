use std::collections::{BTreeSet, HashSet};

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// Words ignored by the lexical negative filter.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn empty() -> Self {
        StopWords(HashSet::new())
    }

    /// The bundled English list (`data/stopwords_en.txt`).
    pub fn default_english() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    /// One token per line; blank lines ignored, duplicates collapse.
    pub fn parse(text: &str) -> Self {
        StopWords(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<String> for StopWords {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        StopWords(iter.into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    /// Distinct tokens that are not stop words.
    pub content_words: BTreeSet<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercases, splits on runs of non-alphanumeric characters and keeps the
/// first `max_seq_len` tokens.
pub fn tokenize(text: &str, max_seq_len: usize, stopwords: &StopWords) -> Result<TokenSequence> {
    if max_seq_len == 0 {
        return Err(Error::config("max_seq_len must be at least 1"));
    }
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(max_seq_len)
        .map(str::to_lowercase)
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyText(text.to_string()));
    }
    let content_words = tokens.iter().filter(|t| !stopwords.contains(t)).cloned().collect();
    Ok(TokenSequence { tokens, content_words })
}
