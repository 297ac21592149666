//! Tokenization and answer-span matching.
//!
//! One tokenizer is shared by BM25 indexing, the dense encoder vocabulary,
//! hard-negative filtering and Top-K answer accuracy, so all of them agree
//! on what a "word" is. Text is NFKC-normalized and lowercased; every
//! character that is not alphanumeric separates tokens, except `.` and `,`
//! sitting between two digits (`0.82`, `1,000`). No stemming, no stopwords.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Passage;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<String>,
    /// Character count of the text before normalization.
    pub source_length: usize,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

pub fn tokenize(text: &str) -> TokenStream {
    let normalized: Vec<char> = text.nfkc().flat_map(char::to_lowercase).collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in normalized.iter().enumerate() {
        if c.is_alphanumeric() {
            current.push(c);
            continue;
        }
        let numeric_joiner = (c == '.' || c == ',')
            && current.chars().last().is_some_and(|p| p.is_numeric())
            && normalized.get(i + 1).is_some_and(|n| n.is_numeric());
        if numeric_joiner {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenStream {
        tokens,
        source_length: text.chars().count(),
    }
}

/// Number of (possibly overlapping) contiguous occurrences of `needle` in `haystack`.
pub fn count_occurrences(haystack: &[String], needle: &[String]) -> usize {
    if needle.is_empty() || needle.len() > haystack.len() {
        return 0;
    }
    haystack.windows(needle.len()).filter(|w| *w == needle).count()
}

pub fn contains_tokens(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Total occurrences of any answer in a token sequence.
pub fn answer_occurrences(tokens: &[String], answers: &[String]) -> usize {
    answers
        .iter()
        .map(|a| count_occurrences(tokens, &tokenize(a).tokens))
        .sum()
}

/// True when some answer's token sequence occurs contiguously in the passage text.
pub fn contains_answer_span(passage: &Passage, answers: &[String]) -> bool {
    let tokens = tokenize(&passage.text).tokens;
    contains_any_answer(&tokens, answers)
}

pub fn contains_any_answer(tokens: &[String], answers: &[String]) -> bool {
    answers
        .iter()
        .any(|a| contains_tokens(tokens, &tokenize(a).tokens))
}
