//! Lexical drift between a prompt and a proposed edit.
//!
//! Similarity is a fixed-weight ensemble of a Ratcliff/Obershelp sequence
//! ratio, character-trigram and word-bigram Jaccard, and a stopword-weighted
//! token overlap. Drift is `1 - sim`, raised when key items (numbers, quoted
//! spans, URLs/emails, capitalised entity spans) of the original go missing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agents::AgentKind;
use crate::error::{ConfigError, EmptyInput};
use crate::heuristics::QualityProfile;
use crate::text::{char_len, normalize_for_matching, normalized_words};

const W_SEQ: f64 = 0.5;
const W_JAC: f64 = 0.3;
const W_TOK: f64 = 0.2;
const W_CHAR3: f64 = 0.6;
const W_WORD2: f64 = 0.4;
const STOPWORD_WEIGHT: f64 = 0.2;
/// Candidates longer than this multiple of the original are rejected outright.
const MAX_CANDIDATE_EXPANSION: usize = 2;

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)\b(?:https?://|www\.)[^\s<>"'“”]+"#).unwrap());
static EMAIL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}").unwrap());
static QUOTE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""([^"\n]+)"|“([^”\n]+)”"#).unwrap());
static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:[.,]\d+)*").unwrap());

// ---------------------------------------------------------------------------
// Similarity primitives
// ---------------------------------------------------------------------------

/// Longest matching block in `a[alo..ahi]` x `b[blo..bhi]`, preferring the
/// earliest start in `a`, then in `b`. Returns `(i, j, size)`.
fn longest_match(
    a: &[char],
    b2j: &HashMap<char, Vec<usize>>,
    (alo, ahi, blo, bhi): (usize, usize, usize, usize),
    lens: &mut [Vec<usize>; 2],
) -> (usize, usize, usize) {
    let (mut besti, mut bestj, mut bestsize) = (alo, blo, 0);
    let mut touched: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let (mut prev, mut cur) = (0, 1);
    for (i, c) in a.iter().enumerate().take(ahi).skip(alo) {
        if let Some(js) = b2j.get(c) {
            for &j in js {
                if j < blo {
                    continue;
                }
                if j >= bhi {
                    break;
                }
                // lens[x][j + 1] = length of the run ending at (i, j).
                let k = lens[prev][j] + 1;
                lens[cur][j + 1] = k;
                touched[cur].push(j + 1);
                if k > bestsize {
                    besti = i + 1 - k;
                    bestj = j + 1 - k;
                    bestsize = k;
                }
            }
        }
        for &t in &touched[prev] {
            lens[prev][t] = 0;
        }
        touched[prev].clear();
        std::mem::swap(&mut prev, &mut cur);
    }
    for (row, ts) in touched.iter().enumerate() {
        for &t in ts {
            lens[row][t] = 0;
        }
    }
    (besti, bestj, bestsize)
}

/// Total size of the Ratcliff/Obershelp matching blocks (no junk heuristics).
fn matched_chars(a: &[char], b: &[char]) -> usize {
    let mut b2j: HashMap<char, Vec<usize>> = HashMap::new();
    for (j, c) in b.iter().enumerate() {
        b2j.entry(*c).or_default().push(j);
    }
    let mut lens = [vec![0; b.len() + 1], vec![0; b.len() + 1]];
    let mut total = 0;
    let mut queue = vec![(0, a.len(), 0, b.len())];
    while let Some(span @ (alo, ahi, blo, bhi)) = queue.pop() {
        let (i, j, k) = longest_match(a, &b2j, span, &mut lens);
        if k == 0 {
            continue;
        }
        total += k;
        if alo < i && blo < j {
            queue.push((alo, i, blo, j));
        }
        if i + k < ahi && j + k < bhi {
            queue.push((i + k, ahi, j + k, bhi));
        }
    }
    total
}

/// Gestalt pattern-matching ratio `2M / (|a| + |b|)` on lowercased,
/// whitespace-normalized strings. Two empty strings score 1.0.
pub fn seq_ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = normalize_for_matching(a).chars().collect();
    let b: Vec<char> = normalize_for_matching(b).chars().collect();
    let len = a.len() + b.len();
    if len == 0 {
        return 1.0;
    }
    2.0 * matched_chars(&a, &b) as f64 / len as f64
}

fn jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

fn char_ngrams(s: &str, n: usize) -> HashSet<String> {
    let chars: Vec<char> = normalize_for_matching(s).chars().collect();
    if n == 0 || chars.len() < n {
        return HashSet::new();
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

fn word_ngrams(s: &str, n: usize) -> HashSet<Vec<String>> {
    let words = normalized_words(s);
    if n == 0 || words.len() < n {
        return HashSet::new();
    }
    words.windows(n).map(<[String]>::to_vec).collect()
}

/// Jaccard similarity of character n-gram sets.
pub fn char_ngram_jaccard(a: &str, b: &str, n: usize) -> f64 {
    jaccard(&char_ngrams(a, n), &char_ngrams(b, n))
}

/// Jaccard similarity of word n-gram sets.
pub fn word_ngram_jaccard(a: &str, b: &str, n: usize) -> f64 {
    jaccard(&word_ngrams(a, n), &word_ngrams(b, n))
}

/// Overlap of normalized token sets where stopwords weigh 0.2 and content
/// tokens 1.0.
pub fn weighted_token_overlap(a: &str, b: &str, stopwords: &HashSet<String>) -> f64 {
    let a: HashSet<String> = normalized_words(a).into_iter().collect();
    let b: HashSet<String> = normalized_words(b).into_iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let weight = |t: &String| {
        if stopwords.contains(t) {
            STOPWORD_WEIGHT
        } else {
            1.0
        }
    };
    let inter: f64 = a.intersection(&b).map(weight).sum();
    let union: f64 = a.union(&b).map(weight).sum();
    inter / union
}

// ---------------------------------------------------------------------------
// Key items
// ---------------------------------------------------------------------------

/// Content that an edit must not drop: numbers, quoted spans, URLs/emails and
/// capitalised two-token entity spans, each kept as a multiset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyItems {
    pub numbers: BTreeMap<String, usize>,
    pub quoted: BTreeMap<String, usize>,
    pub urls_emails: BTreeMap<String, usize>,
    pub entities: BTreeMap<String, usize>,
}

fn bump(map: &mut BTreeMap<String, usize>, key: String) {
    *map.entry(key).or_default() += 1;
}

fn trim_punct(s: &str) -> &str {
    s.trim_matches(|c: char| !c.is_alphanumeric())
}

fn url_trim(s: &str) -> &str {
    s.trim_end_matches(['.', ',', ';', ':', '!', '?', ')', ']', '}'])
}

fn is_capitalized(core: &str) -> bool {
    core.chars()
        .next()
        .is_some_and(|c| c.is_alphabetic() && c.is_uppercase())
}

/// Entity spans: maximal runs of at least two capitalised tokens that are not
/// sentence- or line-initial. A token with trailing punctuation closes a run.
fn entity_spans(text: &str) -> Vec<String> {
    let mut spans = Vec::new();
    for line in text.lines() {
        let mut run: Vec<&str> = Vec::new();
        let mut sentence_start = true;
        for raw in line.split_whitespace() {
            let core = trim_punct(raw);
            let capital = !sentence_start && is_capitalized(core);
            if capital {
                run.push(core);
            }
            let closes = !capital || raw.ends_with(|c: char| !c.is_alphanumeric());
            if closes {
                if run.len() >= 2 {
                    spans.push(run.join(" "));
                }
                run.clear();
            }
            sentence_start = raw.ends_with(['.', '!', '?', ':']);
        }
        if run.len() >= 2 {
            spans.push(run.join(" "));
        }
    }
    spans
}

/// Placeholder for removed URL/email/quote spans; it breaks entity runs.
const SPAN_BREAK: &str = " \u{1F} ";

/// Removes URLs, emails and quoted spans, returning the remaining text and
/// the removed items (URLs/emails lowercased, quote contents trimmed).
fn strip_spans(x: &str) -> (String, Vec<String>, Vec<String>) {
    let mut links = Vec::new();
    let mut rest = x.to_owned();
    for re in [&*URL_RE, &*EMAIL_RE] {
        for m in re.find_iter(&rest) {
            let url = url_trim(m.as_str());
            if !url.is_empty() {
                links.push(url.to_lowercase());
            }
        }
        rest = re.replace_all(&rest, SPAN_BREAK).into_owned();
    }
    let mut quotes = Vec::new();
    for caps in QUOTE_RE.captures_iter(&rest) {
        let inner = caps.get(1).or_else(|| caps.get(2)).map_or("", |m| m.as_str());
        let inner = trim_punct(inner);
        if !inner.is_empty() {
            quotes.push(inner.to_owned());
        }
    }
    rest = QUOTE_RE.replace_all(&rest, SPAN_BREAK).into_owned();
    (rest, links, quotes)
}

/// Extracts key items. URLs, emails and quoted spans are removed before
/// numbers and entities are scanned so nothing is counted twice.
pub fn extract_key_items(x: &str) -> KeyItems {
    let mut items = KeyItems::default();
    let (rest, links, quotes) = strip_spans(x);
    for l in links {
        bump(&mut items.urls_emails, l);
    }
    for q in quotes {
        bump(&mut items.quoted, q);
    }
    for m in NUMBER_RE.find_iter(&rest) {
        bump(&mut items.numbers, m.as_str().to_owned());
    }
    for span in entity_spans(&rest) {
        bump(&mut items.entities, span);
    }
    items
}

impl KeyItems {
    /// Total number of items `M`.
    pub fn total(&self) -> usize {
        [&self.numbers, &self.quoted, &self.urls_emails, &self.entities]
            .iter()
            .flat_map(|m| m.values())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    fn categories(&self) -> [(Category, &BTreeMap<String, usize>); 4] {
        [
            (Category::Number, &self.numbers),
            (Category::Quoted, &self.quoted),
            (Category::UrlEmail, &self.urls_emails),
            (Category::Entity, &self.entities),
        ]
    }

    /// Number of items found in `other`, each counted up to its multiplicity.
    pub fn preserved_in(&self, other: &str) -> usize {
        let haystack = Haystack::new(other);
        self.categories()
            .iter()
            .flat_map(|(cat, map)| map.iter().map(|(item, want)| (*cat, item, *want)))
            .map(|(cat, item, want)| want.min(haystack.occurrences(cat, item)))
            .sum()
    }

    /// Items of `self` that do not fully survive in `other`.
    pub fn missing_in(&self, other: &str) -> Vec<String> {
        let haystack = Haystack::new(other);
        self.categories()
            .iter()
            .flat_map(|(cat, map)| map.iter().map(|(item, want)| (*cat, item, *want)))
            .filter(|(cat, item, want)| haystack.occurrences(*cat, item) < *want)
            .map(|(_, item, _)| item.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Category {
    Number,
    Quoted,
    UrlEmail,
    Entity,
}

/// Pre-tokenized views of an edited text for key-item lookups.
struct Haystack<'a> {
    raw: &'a str,
    lowered: String,
    numbers: HashMap<String, usize>,
    words: Vec<String>,
}

impl<'a> Haystack<'a> {
    fn new(raw: &'a str) -> Self {
        let (rest, _, _) = strip_spans(raw);
        let mut numbers: HashMap<String, usize> = HashMap::new();
        for m in NUMBER_RE.find_iter(&rest) {
            *numbers.entry(m.as_str().to_owned()).or_default() += 1;
        }
        Haystack {
            raw,
            lowered: raw.to_lowercase(),
            numbers,
            words: rest
                .split_whitespace()
                .map(|t| trim_punct(t).to_lowercase())
                .collect(),
        }
    }

    fn occurrences(&self, cat: Category, item: &str) -> usize {
        match cat {
            Category::Number => self.numbers.get(item).copied().unwrap_or(0),
            Category::Quoted => self.raw.matches(item).count(),
            Category::UrlEmail => self.lowered.matches(item).count(),
            Category::Entity => {
                let span: Vec<String> = item.split(' ').map(str::to_lowercase).collect();
                self.words.windows(span.len()).filter(|w| *w == span.as_slice()).count()
            }
        }
    }
}

/// Share of the key items of `x` that occur in `x2`; 1.0 when `x` has none.
pub fn preservation_ratio(x: &str, x2: &str) -> f64 {
    let items = extract_key_items(x);
    let m = items.total();
    if m == 0 {
        return 1.0;
    }
    items.preserved_in(x2) as f64 / m as f64
}

// ---------------------------------------------------------------------------
// Drift
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub s_seq: f64,
    pub j_char3: f64,
    pub j_word2: f64,
    pub s_jac: f64,
    pub s_tok: f64,
    pub sim: f64,
    /// `1 - sim`.
    pub d: f64,
    pub p_content: f64,
    pub d_final: f64,
    /// Character-length ratio `len(x2) / len(x)`.
    pub rho: f64,
}

/// Drift caps and the length budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftPolicy {
    pub delta_clean_base: f64,
    /// Upper bound of the typo-relaxed cleaner cap.
    pub delta_clean_ceiling: f64,
    /// Cleaner cap grows by this much per unit of typo score.
    pub clean_relax_per_typo: f64,
    pub delta_para: f64,
    pub delta_para_relaxed: f64,
    /// Clarity below this relaxes the paraphraser cap.
    pub para_relax_clarity: f64,
    pub delta_max: f64,
    pub rho_max: f64,
    pub preservation_floor: f64,
    pub penalty_weight: f64,
}

impl Default for DriftPolicy {
    fn default() -> Self {
        DriftPolicy {
            delta_clean_base: 0.15,
            delta_clean_ceiling: 0.40,
            clean_relax_per_typo: 0.5,
            delta_para: 0.08,
            delta_para_relaxed: 0.13,
            para_relax_clarity: 0.70,
            delta_max: 0.18,
            rho_max: 2.4,
            preservation_floor: 0.8,
            penalty_weight: 0.2,
        }
    }
}

impl DriftPolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = [
            ("drift_policy.delta_clean_base", self.delta_clean_base),
            ("drift_policy.delta_clean_ceiling", self.delta_clean_ceiling),
            ("drift_policy.clean_relax_per_typo", self.clean_relax_per_typo),
            ("drift_policy.delta_para", self.delta_para),
            ("drift_policy.delta_para_relaxed", self.delta_para_relaxed),
            ("drift_policy.para_relax_clarity", self.para_relax_clarity),
            ("drift_policy.delta_max", self.delta_max),
            ("drift_policy.preservation_floor", self.preservation_floor),
            ("drift_policy.penalty_weight", self.penalty_weight),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::invalid(name, format!("{v} is outside [0, 1]")));
            }
        }
        if !(self.delta_para <= self.delta_para_relaxed && self.delta_para_relaxed <= self.delta_max) {
            return Err(ConfigError::invalid(
                "drift_policy.delta_para",
                "require delta_para <= delta_para_relaxed <= delta_max",
            ));
        }
        if self.delta_clean_base > self.delta_clean_ceiling {
            return Err(ConfigError::invalid(
                "drift_policy.delta_clean_base",
                "must not exceed delta_clean_ceiling",
            ));
        }
        if !self.rho_max.is_finite() || self.rho_max <= 1.0 {
            return Err(ConfigError::invalid("drift_policy.rho_max", "must be a finite ratio > 1"));
        }
        Ok(())
    }

    /// Typo-relaxed cleaner cap `min(ceiling, base + slope * typo)`.
    pub fn cleaner_cap(&self, typo: f64) -> f64 {
        (self.delta_clean_base + self.clean_relax_per_typo * typo).min(self.delta_clean_ceiling)
    }

    pub fn paraphraser_cap(&self, clarity: f64) -> f64 {
        if clarity < self.para_relax_clarity {
            self.delta_para_relaxed
        } else {
            self.delta_para
        }
    }

    /// Penalized drift from raw drift and the preservation ratio.
    pub fn penalize(&self, d: f64, p_content: f64) -> f64 {
        if p_content >= self.preservation_floor {
            d
        } else {
            (d + self.penalty_weight * (1.0 - p_content)).min(1.0)
        }
    }
}

/// Similarity components, `sim` and `D`. Preservation fields are left at
/// their no-penalty values and `rho` at 1.
pub fn similarity(a: &str, b: &str, stopwords: &HashSet<String>) -> DriftReport {
    let s_seq = seq_ratio(a, b);
    let j_char3 = char_ngram_jaccard(a, b, 3);
    let j_word2 = word_ngram_jaccard(a, b, 2);
    let s_tok = weighted_token_overlap(a, b, stopwords);
    let s_jac = W_CHAR3 * j_char3 + W_WORD2 * j_word2;
    let sim = (W_SEQ * s_seq + W_JAC * s_jac + W_TOK * s_tok).clamp(0.0, 1.0);
    let d = 1.0 - sim;
    DriftReport {
        s_seq,
        j_char3,
        j_word2,
        s_jac,
        s_tok,
        sim,
        d,
        p_content: 1.0,
        d_final: d,
        rho: 1.0,
    }
}

/// Full drift report of edit `x2` against original `x`.
pub fn drift(
    x: &str,
    x2: &str,
    policy: &DriftPolicy,
    stopwords: &HashSet<String>,
) -> Result<DriftReport, EmptyInput> {
    let len_x = char_len(x);
    if len_x == 0 {
        return Err(EmptyInput);
    }
    let mut report = similarity(x, x2, stopwords);
    report.p_content = preservation_ratio(x, x2);
    report.d_final = policy.penalize(report.d, report.p_content);
    report.rho = char_len(x2) as f64 / len_x as f64;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DriftReason {
    Ok,
    DriftExceeded,
    GlobalCap,
    LengthRatio,
    OverLength,
}

impl DriftReason {
    pub fn code(self) -> &'static str {
        match self {
            DriftReason::Ok => "OK",
            DriftReason::DriftExceeded => "DRIFT_EXCEEDED",
            DriftReason::GlobalCap => "GLOBAL_CAP",
            DriftReason::LengthRatio => "LENGTH_RATIO",
            DriftReason::OverLength => "OVER_LENGTH",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftVerdict {
    pub accepted: bool,
    pub reason: DriftReason,
    /// The agent-specific cap that was applied, if any.
    pub cap: Option<f64>,
    pub report: DriftReport,
}

/// Agent-aware acceptance test for a candidate edit.
///
/// Fact-adder output is additive context and bypasses the drift caps; its
/// budget is enforced by the fact guard and the merger.
pub fn within_drift(
    x: &str,
    x2: &str,
    agent: AgentKind,
    profile: &QualityProfile,
    policy: &DriftPolicy,
    stopwords: &HashSet<String>,
) -> Result<DriftVerdict, EmptyInput> {
    let report = drift(x, x2, policy, stopwords)?;
    let cap = match agent {
        AgentKind::Cleaner => Some(policy.cleaner_cap(profile.typo)),
        AgentKind::Paraphraser => Some(policy.paraphraser_cap(profile.clar)),
        AgentKind::FactAdder => None,
    };
    let reason = match cap {
        None => DriftReason::Ok,
        Some(_) if report.d_final > policy.delta_max => DriftReason::GlobalCap,
        Some(cap) if report.d_final > cap => DriftReason::DriftExceeded,
        Some(_) if report.rho > policy.rho_max => DriftReason::LengthRatio,
        Some(_) if char_len(x2) > MAX_CANDIDATE_EXPANSION * char_len(x) => DriftReason::OverLength,
        Some(_) => DriftReason::Ok,
    };
    Ok(DriftVerdict {
        accepted: reason == DriftReason::Ok,
        reason,
        cap,
        report,
    })
}
