//! Deterministic, offline stand-ins for the three specialists.

use std::collections::HashSet;
use std::sync::{Arc, LazyLock};

use regex::{Captures, Regex};

use super::{AgentError, AgentKind, Specialist, SpecialistRequest};
use crate::lexicon::Lexicons;
use crate::text::{is_question_word, normalize_token, normalized_words};

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\S+").unwrap());
const MAX_FACTS: usize = 3;

/// Mock cleaner, paraphraser and fact adder driven by the shipped lexicons.
#[derive(Debug, Clone)]
pub struct MockSpecialists {
    lex: Arc<Lexicons>,
}

impl Default for MockSpecialists {
    fn default() -> Self {
        MockSpecialists::new(Lexicons::shared())
    }
}

/// Re-applies the casing pattern of `like` to `word`.
fn match_case(word: &str, like: &str) -> String {
    let letters: Vec<char> = like.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        word.to_uppercase()
    } else if letters.first().is_some_and(|c| c.is_uppercase()) {
        capitalize(word)
    } else {
        word.to_owned()
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Shortens every run of 3+ identical letters to 2.
fn collapse_repeats(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut run = 0;
    let mut prev = None;
    for c in s.chars() {
        run = if Some(c) == prev { run + 1 } else { 1 };
        prev = Some(c);
        if !(c.is_alphabetic() && run > 2) {
            out.push(c);
        }
    }
    out
}

impl MockSpecialists {
    pub fn new(lex: Arc<Lexicons>) -> Self {
        MockSpecialists { lex }
    }

    fn fix_token(&self, token: &str) -> String {
        let start = token.find(|c: char| c.is_alphanumeric());
        let end = token.rfind(|c: char| c.is_alphanumeric());
        let (Some(start), Some(end)) = (start, end) else {
            return token.to_owned();
        };
        let end = end + token[end..].chars().next().map_or(0, char::len_utf8);
        let core = &token[start..end];
        let fixed = match self.lex.correction(&core.to_lowercase()) {
            Some(target) => match_case(target, core),
            None => collapse_repeats(core),
        };
        format!("{}{}{}", &token[..start], fixed, &token[end..])
    }

    /// Applies the correction map token by token (whitespace preserved) and
    /// terminates a single-sentence wh-question with `?`.
    pub fn clean(&self, input: &str) -> String {
        let mut out = TOKEN_RE
            .replace_all(input, |c: &Captures| self.fix_token(&c[0]))
            .into_owned();
        let wh_start = out
            .split_whitespace()
            .next()
            .is_some_and(|t| is_question_word(&normalize_token(t)));
        let body = out.trim_end();
        let inner = body.strip_suffix(['.', '!']).unwrap_or(body);
        if wh_start && !body.contains('?') && !inner.contains(['.', '!']) {
            let tail = out[body.len()..].to_owned();
            out = format!("{inner}?{tail}");
        }
        out
    }

    /// Collapses whitespace runs within each line and capitalizes the first letter.
    pub fn paraphrase(&self, input: &str) -> String {
        let text = input
            .lines()
            .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join("\n");
        match text.find(char::is_alphabetic) {
            Some(i) if text[i..].starts_with(char::is_lowercase) => {
                format!("{}{}", &text[..i], capitalize(&text[i..]))
            }
            _ => text,
        }
    }

    /// Up to three fact-table entries for entities mentioned in `input`, in
    /// order of first mention, or `NONE`.
    pub fn facts(&self, input: &str) -> String {
        let mut seen = HashSet::new();
        let lines: Vec<String> = normalized_words(input)
            .into_iter()
            .filter_map(|w| self.lex.facts().iter().find(|(e, _)| *e == w))
            .filter(|(e, _)| seen.insert(e.clone()))
            .take(MAX_FACTS)
            .map(|(_, fact)| format!("- {fact}"))
            .collect();
        if lines.is_empty() {
            "NONE".to_owned()
        } else {
            lines.join("\n")
        }
    }
}

impl Specialist for MockSpecialists {
    fn complete(&self, req: &SpecialistRequest, _instruction: &str) -> Result<String, AgentError> {
        Ok(match req.kind {
            AgentKind::Cleaner => self.clean(&req.input_text),
            AgentKind::Paraphraser => self.paraphrase(&req.input_text),
            AgentKind::FactAdder => self.facts(&req.input_text),
        })
    }
}
