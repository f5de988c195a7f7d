//! Deterministic safety filters applied to specialist output: sanitization,
//! per-agent faithfulness checks, answer-leakage rejection and few-shot
//! segmentation.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agents::AgentKind;
use crate::drift::extract_key_items;
use crate::lexicon::{LeakageKind, Lexicons};
use crate::merger::TokenBudget;
use crate::text::{edit_distance, normalize_token, normalized_words};

static FENCE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^```[^\n]*\n(?s)(.*?)\n?```$").unwrap());
static LIST_MARKER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:[-*•+]|\d{1,2}[.)])\s+").unwrap());
static QUESTION_MARKER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t]*(?:Q|Question)[ \t]*:").unwrap());
static ANSWERED_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|\s)(?:A|Answer)[ \t]*:[ \t]*\S").unwrap());
/// Words a meta-phrase may trail off into before the colon that ends it
/// ("Sure, here's the corrected version: ...").
const META_CLAUSE_MAX_WORDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GuardReason {
    Ok,
    NewContent,
    DroppedConstraint,
    LostQuestionMark,
    AnswerLeakage,
    ReasoningMarker,
    MetaCommentaryOnly,
    OverLength,
}

impl GuardReason {
    pub fn code(self) -> &'static str {
        match self {
            GuardReason::Ok => "OK",
            GuardReason::NewContent => "NEW_CONTENT",
            GuardReason::DroppedConstraint => "DROPPED_CONSTRAINT",
            GuardReason::LostQuestionMark => "LOST_QUESTION_MARK",
            GuardReason::AnswerLeakage => "ANSWER_LEAKAGE",
            GuardReason::ReasoningMarker => "REASONING_MARKER",
            GuardReason::MetaCommentaryOnly => "META_COMMENTARY_ONLY",
            GuardReason::OverLength => "OVER_LENGTH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardVerdict {
    pub passed: bool,
    pub reason: GuardReason,
    /// Set when sanitization changed the raw specialist output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repaired_text: Option<String>,
}

impl GuardVerdict {
    pub fn ok() -> Self {
        GuardVerdict {
            passed: true,
            reason: GuardReason::Ok,
            repaired_text: None,
        }
    }

    pub fn fail(reason: GuardReason) -> Self {
        debug_assert_ne!(reason, GuardReason::Ok);
        GuardVerdict {
            passed: false,
            reason,
            repaired_text: None,
        }
    }

    pub fn with_repair(mut self, repaired: Option<String>) -> Self {
        self.repaired_text = repaired;
        self
    }
}

// ---------------------------------------------------------------------------
// Sanitization
// ---------------------------------------------------------------------------

fn strip_fence(s: &str) -> Option<&str> {
    FENCE_RE.captures(s).map(|c| c.get(1).map_or("", |m| m.as_str()))
}

fn strip_meta_phrase<'a>(s: &'a str, lex: &Lexicons) -> Option<&'a str> {
    let lowered = s.to_lowercase();
    for phrase in lex.meta_phrases() {
        if !lowered.starts_with(phrase.as_str()) {
            continue;
        }
        // Byte offsets line up only when lowercasing preserved lengths.
        if lowered.len() != s.len() {
            break;
        }
        let rest = &s[phrase.len()..];
        let phrase_closed = phrase.ends_with(|c: char| !c.is_alphanumeric());
        if !phrase_closed && rest.starts_with(|c: char| c.is_alphanumeric()) {
            continue;
        }
        let rest = match rest.split_once(':') {
            Some((clause, after))
                if !clause.contains('\n')
                    && clause.split_whitespace().count() <= META_CLAUSE_MAX_WORDS =>
            {
                after
            }
            _ => rest,
        };
        return Some(rest.trim_start_matches(|c: char| c == ':' || c == ',' || c.is_whitespace()));
    }
    None
}

fn strip_enclosing_quotes(s: &str) -> Option<&str> {
    for (open, close) in [('"', '"'), ('“', '”'), ('\'', '\''), ('`', '`')] {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            if !inner.contains(open) && !inner.contains(close) {
                return Some(inner);
            }
        }
    }
    None
}

fn strip_list_marker(s: &str) -> Option<&str> {
    if s.contains('\n') {
        return None;
    }
    LIST_MARKER_RE.find(s).map(|m| &s[m.end()..])
}

/// Removes meta-commentary openers, enclosing quotes, markdown fences and a
/// leading list marker on single-line output, repeating until nothing
/// changes. Fails with `META_COMMENTARY_ONLY` if nothing is left.
pub fn sanitize(candidate: &str, lex: &Lexicons) -> Result<String, GuardReason> {
    let mut current = candidate.trim();
    loop {
        let next = strip_fence(current)
            .or_else(|| strip_meta_phrase(current, lex))
            .or_else(|| strip_enclosing_quotes(current))
            .or_else(|| strip_list_marker(current))
            .map(str::trim);
        match next {
            Some(n) if n != current => current = n,
            _ => break,
        }
    }
    if current.is_empty() {
        Err(GuardReason::MetaCommentaryOnly)
    } else {
        Ok(current.to_owned())
    }
}

/// Sanitizes Fact-Adder output and splits it into bullet bodies (list markers
/// removed, empty lines dropped). Returns `None` for an explicit abstention.
pub fn parse_fact_bullets(raw: &str, lex: &Lexicons) -> Result<Option<Vec<String>>, GuardReason> {
    if is_none_output(raw) {
        return Ok(None);
    }
    let cleaned = sanitize(raw, lex)?;
    if is_none_output(&cleaned) {
        return Ok(None);
    }
    let bullets: Vec<String> = cleaned
        .lines()
        .map(|l| {
            let l = l.trim();
            LIST_MARKER_RE.find(l).map_or(l, |m| &l[m.end()..]).trim().to_owned()
        })
        .filter(|l| !l.is_empty())
        .collect();
    Ok(if bullets.is_empty() { None } else { Some(bullets) })
}

/// True when the text normalizes to the abstention token `NONE`.
pub fn is_none_output(raw: &str) -> bool {
    raw.trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .eq_ignore_ascii_case("none")
}

// ---------------------------------------------------------------------------
// Per-agent guards
// ---------------------------------------------------------------------------

fn lost_question_mark(original: &str, edited: &str) -> bool {
    original.trim_end().ends_with('?') && !edited.trim_end().ends_with('?')
}

fn has_digit(s: &str) -> bool {
    s.chars().any(|c| c.is_ascii_digit())
}

/// True if `edited` has any key item (number, quote, URL/email, entity span)
/// that `original` does not account for.
fn introduces_key_items(original: &str, edited: &str) -> bool {
    let added = extract_key_items(edited);
    added.preserved_in(original) < added.total()
}

/// Cleaner edits may only fix surface noise: every new content token must be
/// a correction of, or within edit distance 2 of, an original token. New
/// numbers and URLs are never allowed.
pub fn cleaner_guard(original: &str, edited: &str, lex: &Lexicons) -> GuardVerdict {
    let original_tokens: HashSet<String> = normalized_words(original).into_iter().collect();
    let corrections: HashSet<&str> = original_tokens
        .iter()
        .filter_map(|t| lex.correction(t))
        .collect();
    let explained = |t: &str| {
        corrections.contains(t)
            || (!has_digit(t) && original_tokens.iter().any(|o| edit_distance(o, t) <= 2))
    };
    let new_content = edited
        .split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty() && !original_tokens.contains(t) && !lex.is_stopword(t))
        .any(|t| !explained(&t));
    let original_items = extract_key_items(original);
    let edited_items = extract_key_items(edited);
    let new_links = edited_items.urls_emails.keys().any(|u| !original_items.urls_emails.contains_key(u));

    if new_content || new_links {
        GuardVerdict::fail(GuardReason::NewContent)
    } else if original_items.preserved_in(edited) < original_items.total() {
        GuardVerdict::fail(GuardReason::DroppedConstraint)
    } else if lost_question_mark(original, edited) {
        GuardVerdict::fail(GuardReason::LostQuestionMark)
    } else {
        GuardVerdict::ok()
    }
}

/// Paraphrases must keep every key item, add none, and keep a trailing `?`.
pub fn paraphrase_guard(original: &str, edited: &str) -> GuardVerdict {
    let original_items = extract_key_items(original);
    if original_items.preserved_in(edited) < original_items.total() {
        GuardVerdict::fail(GuardReason::DroppedConstraint)
    } else if introduces_key_items(original, edited) {
        GuardVerdict::fail(GuardReason::NewContent)
    } else if lost_question_mark(original, edited) {
        GuardVerdict::fail(GuardReason::LostQuestionMark)
    } else {
        GuardVerdict::ok()
    }
}

/// Result of filtering Fact-Adder bullets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactFilter {
    /// Surviving bullets in their original order. Empty means `NONE`.
    pub kept: Vec<String>,
    pub rejected: Vec<(String, GuardReason)>,
}

impl FactFilter {
    pub fn is_none(&self) -> bool {
        self.kept.is_empty()
    }
}

fn leaks_answer(bullet: &str) -> bool {
    let Some(last) = bullet.split_whitespace().last() else {
        return false;
    };
    let core = last.trim_matches(|c: char| !c.is_alphanumeric());
    let option_letter = core.len() == 1 && core.chars().all(|c| ('A'..='E').contains(&c));
    let bare_number = !core.is_empty()
        && core.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',')
        && has_digit(core);
    option_letter || bare_number
}

/// Classifies a single bullet, ignoring the budget.
pub fn check_fact_bullet(bullet: &str, lex: &Lexicons) -> GuardReason {
    for p in lex.leakage_patterns() {
        if p.regex.is_match(bullet) {
            return match p.kind {
                LeakageKind::Answer => GuardReason::AnswerLeakage,
                LeakageKind::Reasoning => GuardReason::ReasoningMarker,
            };
        }
    }
    if leaks_answer(bullet) {
        GuardReason::AnswerLeakage
    } else {
        GuardReason::Ok
    }
}

/// Drops leaking bullets, then keeps bullets in order until the bullet or
/// token cap would be exceeded.
pub fn fact_guard(facts: &[String], budget: &TokenBudget, lex: &Lexicons) -> FactFilter {
    let mut filter = FactFilter::default();
    let mut tokens = 0;
    let mut full = false;
    for bullet in facts {
        let bullet = bullet.trim();
        if bullet.is_empty() {
            continue;
        }
        let reason = check_fact_bullet(bullet, lex);
        if reason != GuardReason::Ok {
            filter.rejected.push((bullet.to_owned(), reason));
            continue;
        }
        let cost = budget.counter.count(bullet);
        if !full && filter.kept.len() < budget.fact_bullet_cap && tokens + cost <= budget.fact_token_cap {
            tokens += cost;
            filter.kept.push(bullet.to_owned());
        } else {
            full = true;
            filter.rejected.push((bullet.to_owned(), GuardReason::OverLength));
        }
    }
    filter
}

/// Pluggable faithfulness check for rewriting agents.
pub trait EditGuard: Send + Sync {
    fn check(&self, agent: AgentKind, original: &str, edited: &str) -> GuardVerdict;
}

/// The default, rule-based guard.
#[derive(Debug, Clone)]
pub struct DeterministicGuard {
    lex: std::sync::Arc<Lexicons>,
}

impl DeterministicGuard {
    pub fn new(lex: std::sync::Arc<Lexicons>) -> Self {
        DeterministicGuard { lex }
    }
}

impl EditGuard for DeterministicGuard {
    fn check(&self, agent: AgentKind, original: &str, edited: &str) -> GuardVerdict {
        match agent {
            AgentKind::Cleaner => cleaner_guard(original, edited, &self.lex),
            AgentKind::Paraphraser => paraphrase_guard(original, edited),
            // Fact bullets go through `fact_guard`; the query itself is untouched.
            AgentKind::FactAdder => GuardVerdict::ok(),
        }
    }
}

// ---------------------------------------------------------------------------
// Few-shot segmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSegmentation {
    /// Exemplar block (and any header before it), without trailing whitespace.
    pub prefix: String,
    /// Whitespace between the prefix and the final query.
    pub separator: String,
    pub final_query: String,
    pub detected: bool,
}

impl FewShotSegmentation {
    pub fn undetected(prompt: &str) -> Self {
        FewShotSegmentation {
            prefix: String::new(),
            separator: String::new(),
            final_query: prompt.to_owned(),
            detected: false,
        }
    }

    /// Re-attaches the prefix to a (possibly edited) query.
    pub fn reassemble(&self, query: &str) -> String {
        format!("{}{}{}", self.prefix, self.separator, query)
    }
}

/// Splits a few-shot prompt into its exemplar prefix and the final,
/// unanswered `Q:` block. Needs at least two answered exemplars.
pub fn detect_fewshot(prompt: &str) -> FewShotSegmentation {
    let starts: Vec<usize> = QUESTION_MARKER_RE
        .find_iter(prompt)
        .map(|m| {
            // Skip leading indentation so the block starts at the marker.
            m.start() + (m.as_str().len() - m.as_str().trim_start().len())
        })
        .collect();
    if starts.len() < 3 {
        return FewShotSegmentation::undetected(prompt);
    }
    let last = *starts.last().unwrap();
    let exemplars_answered = starts
        .windows(2)
        .all(|w| ANSWERED_RE.is_match(&prompt[w[0]..w[1]]));
    if !exemplars_answered || ANSWERED_RE.is_match(&prompt[last..]) {
        return FewShotSegmentation::undetected(prompt);
    }
    let head = &prompt[..last];
    let prefix = head.trim_end();
    FewShotSegmentation {
        prefix: prefix.to_owned(),
        separator: head[prefix.len()..].to_owned(),
        final_query: prompt[last..].to_owned(),
        detected: true,
    }
}
