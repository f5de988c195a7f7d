//! Tokenization and text normalization shared by every scoring module.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::EmptyInput;

const QUESTION_WORDS: [&str; 6] = ["what", "why", "how", "when", "where", "who"];

/// NFC form of `s`.
pub fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Length in Unicode scalar values.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Lowercases a token and strips non-alphanumeric characters from both ends.
pub fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Lowercases and collapses every whitespace run to a single space.
pub fn normalize_for_matching(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalized, non-empty word tokens of `s`.
pub fn normalized_words(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn is_question_word(token: &str) -> bool {
    QUESTION_WORDS.contains(&token)
}

/// A prompt split on whitespace, with the derived views the heuristics need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedPrompt {
    pub raw: String,
    pub tokens: Vec<String>,
    pub normalized_tokens: Vec<String>,
    pub char_count: usize,
    pub is_question_start: bool,
}

impl TokenizedPrompt {
    /// Tokenizes the NFC form of `raw`. Rejects empty and whitespace-only input.
    pub fn new(raw: &str) -> Result<Self, EmptyInput> {
        let raw = nfc(raw);
        let tokens: Vec<String> = raw.split_whitespace().map(str::to_owned).collect();
        if tokens.is_empty() {
            return Err(EmptyInput);
        }
        let normalized_tokens: Vec<String> = tokens.iter().map(|t| normalize_token(t)).collect();
        let is_question_start = normalized_tokens
            .first()
            .is_some_and(|t| is_question_word(t));
        Ok(TokenizedPrompt {
            char_count: char_len(&raw),
            raw,
            tokens,
            normalized_tokens,
            is_question_start,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Token counter used for fact budgets and added-token accounting.
///
/// `Whitespace` counts whitespace-delimited tokens. `CharQuarter` approximates
/// subword tokenizers as `ceil(chars / 4)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCounter {
    #[default]
    Whitespace,
    CharQuarter,
}

impl TokenCounter {
    pub fn count(self, text: &str) -> usize {
        match self {
            TokenCounter::Whitespace => text.split_whitespace().count(),
            TokenCounter::CharQuarter => char_len(text).div_ceil(4),
        }
    }
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
