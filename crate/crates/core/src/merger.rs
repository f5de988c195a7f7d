//! Drift-controlled composition of accepted candidates into the final prompt.

use serde::{Deserialize, Serialize};

use crate::agents::AgentKind;
use crate::drift::{drift, within_drift, DriftPolicy, DriftReason, DriftReport};
use crate::error::ConfigError;
use crate::guards::{FewShotSegmentation, GuardVerdict};
use crate::heuristics::QualityProfile;
use crate::lexicon::Lexicons;
use crate::text::{char_len, TokenCounter};

/// Rejection code for a composed output that introduced meta-commentary.
pub const META_COMMENTARY: &str = "META_COMMENTARY";

/// Fact-block limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenBudget {
    pub fact_token_cap: usize,
    pub fact_bullet_cap: usize,
    pub counter: TokenCounter,
}

impl Default for TokenBudget {
    fn default() -> Self {
        TokenBudget {
            fact_token_cap: 120,
            fact_bullet_cap: 3,
            counter: TokenCounter::Whitespace,
        }
    }
}

impl TokenBudget {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.fact_bullet_cap == 0 {
            return Err(ConfigError::invalid("budget.fact_bullet_cap", "must be at least 1"));
        }
        if self.fact_token_cap == 0 {
            return Err(ConfigError::invalid("budget.fact_token_cap", "must be at least 1"));
        }
        Ok(())
    }

    /// Longest prefix of `bullets` within both caps, stopping at the first
    /// bullet that would exceed either.
    pub fn admit<'a>(&self, bullets: &'a [String]) -> &'a [String] {
        let mut tokens = 0;
        for (i, b) in bullets.iter().enumerate() {
            tokens += self.counter.count(b);
            if i >= self.fact_bullet_cap || tokens > self.fact_token_cap {
                return &bullets[..i];
            }
        }
        bullets
    }
}

/// One specialist's proposal with its verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub agent: AgentKind,
    pub raw_output: String,
    /// Sanitized rewrite, or the rendered fact block for the Fact-Adder.
    pub sanitized_text: String,
    /// Surviving fact bullets (Fact-Adder only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bullets: Vec<String>,
    pub guard: GuardVerdict,
    pub drift: Option<DriftReport>,
    pub drift_reason: Option<DriftReason>,
    pub accepted: bool,
}

impl Candidate {
    /// Reason code for a rejected candidate.
    pub fn rejection(&self) -> Option<&'static str> {
        if self.accepted {
            None
        } else if !self.guard.passed {
            Some(self.guard.reason.code())
        } else {
            Some(self.drift_reason.map_or("REJECTED", DriftReason::code))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub agent: AgentKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub output: String,
    pub applied_agents: Vec<AgentKind>,
    pub rejected: Vec<Rejection>,
    pub fell_back: bool,
    pub added_prompt_tokens: usize,
    /// Tokens of the prepended fact block (bullet lines and separator).
    pub fact_tokens: usize,
}

impl MergeDecision {
    pub fn fallback(original: &str, rejected: Vec<Rejection>) -> Self {
        MergeDecision {
            output: original.to_owned(),
            applied_agents: Vec::new(),
            rejected,
            fell_back: true,
            added_prompt_tokens: 0,
            fact_tokens: 0,
        }
    }
}

/// Renders admitted bullets as `- ` lines followed by one blank line and the query.
pub fn prepend_facts(query: &str, bullets: &[String], budget: &TokenBudget) -> String {
    let admitted = budget.admit(bullets);
    if admitted.is_empty() {
        return query.to_owned();
    }
    let block: Vec<String> = admitted.iter().map(|b| format!("- {b}")).collect();
    format!("{}\n\n{}", block.join("\n"), query)
}

/// Stateless merge settings.
#[derive(Debug, Clone, Copy)]
pub struct Merger<'a> {
    pub budget: &'a TokenBudget,
    pub policy: &'a DriftPolicy,
    pub lex: &'a Lexicons,
}

impl Merger<'_> {
    fn introduces_meta_phrase(&self, original: &str, output: &str) -> bool {
        let (original, output) = (original.to_lowercase(), output.to_lowercase());
        self.lex
            .meta_phrases()
            .iter()
            .any(|p| output.contains(p.as_str()) && !original.contains(p.as_str()))
    }

    /// Composes accepted candidates in precedence order (Cleaner, then
    /// Paraphraser re-checked against the working text, then fact bullets),
    /// re-attaches the few-shot prefix and applies the global drift, length
    /// and meta-commentary checks. Any failure returns `original` unchanged.
    pub fn merge(
        &self,
        original: &str,
        candidates: &[Candidate],
        seg: &FewShotSegmentation,
        profile: &QualityProfile,
    ) -> MergeDecision {
        let mut sorted: Vec<&Candidate> = candidates.iter().collect();
        sorted.sort_by_key(|c| c.agent);
        let mut rejected: Vec<Rejection> = sorted
            .iter()
            .filter_map(|c| {
                c.rejection().map(|r| Rejection {
                    agent: c.agent,
                    reason: r.to_owned(),
                })
            })
            .collect();
        let accepted = |kind: AgentKind| sorted.iter().find(|c| c.agent == kind && c.accepted);
        if !sorted.iter().any(|c| c.accepted) {
            return MergeDecision::fallback(original, rejected);
        }

        let stopwords = self.lex.stopwords();
        let mut query = seg.final_query.clone();
        let mut applied = Vec::new();
        if let Some(c) = accepted(AgentKind::Cleaner) {
            query = c.sanitized_text.clone();
            applied.push(AgentKind::Cleaner);
        }
        if let Some(c) = accepted(AgentKind::Paraphraser) {
            let recheck = if applied.is_empty() {
                Ok(())
            } else {
                match within_drift(&query, &c.sanitized_text, AgentKind::Paraphraser, profile, self.policy, stopwords) {
                    Ok(v) if v.accepted => Ok(()),
                    Ok(v) => Err(v.reason.code()),
                    Err(_) => Err(DriftReason::DriftExceeded.code()),
                }
            };
            match recheck {
                Ok(()) => {
                    query = c.sanitized_text.clone();
                    applied.push(AgentKind::Paraphraser);
                }
                Err(code) => rejected.push(Rejection {
                    agent: AgentKind::Paraphraser,
                    reason: code.to_owned(),
                }),
            }
        }
        let mut composed = query.clone();
        let mut fact_tokens = 0;
        if let Some(c) = accepted(AgentKind::FactAdder) {
            composed = prepend_facts(&query, &c.bullets, self.budget);
            if composed != query {
                applied.push(AgentKind::FactAdder);
                let block = &composed[..composed.len() - query.len()];
                fact_tokens = self.budget.counter.count(block);
            }
        }
        let output = seg.reassemble(&composed);

        let global = match drift(&seg.final_query, &query, self.policy, stopwords) {
            Ok(r) if r.d_final > self.policy.delta_max => Some(DriftReason::GlobalCap.code()),
            Ok(_) => None,
            Err(_) => Some(DriftReason::GlobalCap.code()),
        }
        .or_else(|| {
            let rho = char_len(&output) as f64 / char_len(original).max(1) as f64;
            (rho > self.policy.rho_max).then_some(DriftReason::LengthRatio.code())
        })
        .or_else(|| self.introduces_meta_phrase(original, &output).then_some(META_COMMENTARY));
        if let Some(code) = global {
            rejected.extend(applied.iter().map(|a| Rejection {
                agent: *a,
                reason: code.to_owned(),
            }));
            return MergeDecision::fallback(original, rejected);
        }
        if applied.is_empty() {
            return MergeDecision::fallback(original, rejected);
        }

        let counter = self.budget.counter;
        MergeDecision {
            added_prompt_tokens: counter.count(&output).saturating_sub(counter.count(original)),
            output,
            applied_agents: applied,
            rejected,
            fell_back: false,
            fact_tokens,
        }
    }
}
