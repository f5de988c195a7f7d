//! CPU-only prompt quality scores and the skip gate.
//!
//! Each score starts from a fixed value and adds (typo) or subtracts
//! (completeness, fluency, clarity) fixed penalties; the sum is clipped to
//! `[0, 1]`. All comparisons are strict as written.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, EmptyInput};
use crate::lexicon::Lexicons;
use crate::text::{is_question_word, TokenizedPrompt};

const NOISE_WEIGHT: f64 = 0.04;
const NOISE_MATCH_CAP: usize = 8;
const MISSING_QUESTION_MARK: f64 = 0.05;
const CASE_ANOMALY: f64 = 0.05;
const CASE_ANOMALY_MIN_CHARS: usize = 20;
const CASE_DOMINANCE: f64 = 0.90;
const SHORT_WORD_PENALTY: f64 = 0.08;
const SHORT_WORD_RATIO: f64 = 0.35;

const LEADING_PRONOUNS: [&str; 5] = ["it", "this", "that", "they", "them"];
const VAGUE_TEMPLATES: [&[&str]; 6] = [
    &["what", "is"],
    &["what", "are"],
    &["what's"],
    &["tell", "me", "about"],
    &["who", "is"],
    &["who", "was"],
];

fn clip(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn positive_part(x: f64) -> f64 {
    x.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingThresholds {
    pub tau_typo: f64,
    pub tau_comp: f64,
    pub tau_flu: f64,
    pub tau_skip: f64,
    /// The fixed clarity floor inside `q(x)`.
    pub tau_clar_fixed: f64,
    /// Skipping additionally requires `typo < typo_skip_max`.
    pub typo_skip_max: f64,
}

impl Default for RoutingThresholds {
    fn default() -> Self {
        RoutingThresholds {
            tau_typo: 0.30,
            tau_comp: 0.70,
            tau_flu: 0.80,
            tau_skip: 0.25,
            tau_clar_fixed: 0.70,
            typo_skip_max: 0.20,
        }
    }
}

impl RoutingThresholds {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("thresholds.tau_typo", self.tau_typo),
            ("thresholds.tau_comp", self.tau_comp),
            ("thresholds.tau_flu", self.tau_flu),
            ("thresholds.tau_skip", self.tau_skip),
            ("thresholds.tau_clar_fixed", self.tau_clar_fixed),
            ("thresholds.typo_skip_max", self.typo_skip_max),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::invalid(name, format!("{v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// The four heuristic scores and the overall quality `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityProfile {
    /// Higher is worse.
    pub typo: f64,
    pub comp: f64,
    pub flu: f64,
    pub clar: f64,
    pub q: f64,
}

impl QualityProfile {
    /// Builds a profile from the four scores, computing `q`.
    pub fn from_scores(typo: f64, comp: f64, flu: f64, clar: f64, t: &RoutingThresholds) -> Self {
        let (typo, comp, flu, clar) = (clip(typo), clip(comp), clip(flu), clip(clar));
        QualityProfile {
            typo,
            comp,
            flu,
            clar,
            q: overall_quality(typo, comp, flu, clar, t),
        }
    }
}

/// `1 - max(typo, [tau_comp - comp]+, [tau_flu - flu]+, [tau_clar - clar]+)`.
pub fn overall_quality(typo: f64, comp: f64, flu: f64, clar: f64, t: &RoutingThresholds) -> f64 {
    let worst = typo
        .max(positive_part(t.tau_comp - comp))
        .max(positive_part(t.tau_flu - flu))
        .max(positive_part(t.tau_clar_fixed - clar));
    clip(1.0 - worst)
}

fn has_letter_run(token: &str, run: usize) -> bool {
    let mut prev = None;
    let mut count = 0;
    for c in token.chars() {
        if c.is_alphabetic() && Some(c) == prev {
            count += 1;
            if count >= run {
                return true;
            }
        } else {
            count = 1;
        }
        prev = Some(c);
    }
    false
}

/// Number of tokens that hit the noise lexicon or a noise pattern
/// (a letter repeated three or more times, or a derived misspelling of a
/// lexicon word). Each token counts at most once.
pub fn noise_matches(p: &TokenizedPrompt, lex: &Lexicons) -> usize {
    p.normalized_tokens
        .iter()
        .filter(|t| !t.is_empty())
        .filter(|t| {
            lex.is_lexicon_misspelling(t) || has_letter_run(t, 3) || lex.is_derived_variant(t)
        })
        .count()
}

fn case_anomaly(p: &TokenizedPrompt) -> bool {
    if p.char_count <= CASE_ANOMALY_MIN_CHARS {
        return false;
    }
    let letters: Vec<char> = p.raw.chars().filter(|c| c.is_alphabetic()).collect();
    let upper = letters.iter().filter(|c| c.is_uppercase()).count();
    let lower = letters.iter().filter(|c| c.is_lowercase()).count();
    let cased = upper + lower;
    if cased == 0 {
        return false;
    }
    let upper_share = upper as f64 / cased as f64;
    let lower_share = lower as f64 / cased as f64;
    // Ordinary sentences are mostly lowercase too; only flag lowercase
    // dominance when the prompt is not even capitalised.
    let starts_lower = letters.first().is_some_and(|c| c.is_lowercase());
    upper_share >= CASE_DOMINANCE || (lower_share >= CASE_DOMINANCE && starts_lower)
}

fn short_word_ratio_exceeded(p: &TokenizedPrompt, lex: &Lexicons) -> bool {
    let content: Vec<&String> = p
        .normalized_tokens
        .iter()
        .filter(|t| !t.is_empty() && !lex.is_stopword(t))
        .collect();
    if content.is_empty() {
        return false;
    }
    let short = content.iter().filter(|t| t.chars().count() <= 2).count();
    short as f64 / content.len() as f64 > SHORT_WORD_RATIO
}

/// Wh-start, also through a noise-lexicon correction ("wht" counts as "what").
fn starts_wh_question(p: &TokenizedPrompt, lex: &Lexicons) -> bool {
    p.is_question_start
        || p
            .normalized_tokens
            .first()
            .and_then(|t| lex.correction(t))
            .is_some_and(is_question_word)
}

pub fn typo_score(p: &TokenizedPrompt, lex: &Lexicons) -> Result<f64, EmptyInput> {
    if p.is_empty() {
        return Err(EmptyInput);
    }
    let m = noise_matches(p, lex).min(NOISE_MATCH_CAP);
    let mut score = NOISE_WEIGHT * m as f64;
    if starts_wh_question(p, lex) && !p.raw.trim_end().ends_with('?') {
        score += MISSING_QUESTION_MARK;
    }
    if case_anomaly(p) {
        score += CASE_ANOMALY;
    }
    if short_word_ratio_exceeded(p, lex) {
        score += SHORT_WORD_PENALTY;
    }
    Ok(clip(score))
}

fn matches_vague_template(p: &TokenizedPrompt) -> Option<usize> {
    VAGUE_TEMPLATES.iter().find_map(|tpl| {
        let hit = tpl.len() < p.normalized_tokens.len()
            && tpl
                .iter()
                .zip(&p.normalized_tokens)
                .all(|(a, b)| *a == b.as_str());
        hit.then_some(tpl.len())
    })
}

pub fn completeness_score(p: &TokenizedPrompt, lex: &Lexicons) -> Result<f64, EmptyInput> {
    if p.is_empty() {
        return Err(EmptyInput);
    }
    let n = p.len();
    let mut score = 1.0;
    if n < 5 {
        score -= 0.25;
    } else if n < 10 {
        score -= 0.15;
    }
    if n < 15 && !p.normalized_tokens.iter().any(|t| lex.is_detail_cue(t)) {
        score -= 0.10;
    }
    if let Some(template_len) = matches_vague_template(p) {
        let constrained = p.normalized_tokens[template_len..]
            .iter()
            .any(|t| lex.is_constraint_cue(t) || t.chars().any(|c| c.is_ascii_digit()));
        if !constrained {
            score -= 0.10;
        }
    }
    Ok(clip(score))
}

pub fn fluency_score(p: &TokenizedPrompt) -> Result<f64, EmptyInput> {
    if p.is_empty() {
        return Err(EmptyInput);
    }
    let n = p.len();
    let mut score = 1.0;
    if n < 3 {
        score -= 0.25;
    }
    let mut bigrams: HashMap<(&str, &str), usize> = HashMap::new();
    for w in p.tokens.windows(2) {
        *bigrams.entry((w[0].as_str(), w[1].as_str())).or_default() += 1;
    }
    if bigrams.values().any(|&c| c >= 2) {
        score -= 0.15;
    }
    let first_lower = p.tokens[0]
        .chars()
        .find(|c| c.is_alphabetic())
        .is_some_and(|c| c.is_lowercase());
    let has_sentence_end = p.raw.contains(['.', '!', '?']);
    if n >= 12 && first_lower && has_sentence_end {
        score -= 0.10;
    }
    Ok(clip(score))
}

pub fn clarity_score(p: &TokenizedPrompt) -> Result<f64, EmptyInput> {
    if p.is_empty() {
        return Err(EmptyInput);
    }
    let n = p.len();
    let mut score = 1.0;
    if n >= 12 {
        let types: HashSet<&String> = p.normalized_tokens.iter().collect();
        if (types.len() as f64 / n as f64) < 0.35 {
            score -= 0.15;
        }
    }
    if p
        .normalized_tokens
        .first()
        .is_some_and(|t| LEADING_PRONOUNS.contains(&t.as_str()))
    {
        score -= 0.10;
    }
    if n > 200 {
        score -= 0.08;
    }
    Ok(clip(score))
}

/// Computes all four scores and `q`.
pub fn analyze(
    p: &TokenizedPrompt,
    t: &RoutingThresholds,
    lex: &Lexicons,
) -> Result<QualityProfile, EmptyInput> {
    Ok(QualityProfile::from_scores(
        typo_score(p, lex)?,
        completeness_score(p, lex)?,
        fluency_score(p)?,
        clarity_score(p)?,
        t,
    ))
}

/// Conservative skip: `q > 1 - tau_skip` and `typo < typo_skip_max`.
pub fn should_skip(profile: &QualityProfile, t: &RoutingThresholds) -> bool {
    profile.q > 1.0 - t.tau_skip && profile.typo < t.typo_skip_max
}
