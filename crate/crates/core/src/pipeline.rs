//! End-to-end optimization: analyze, skip or route, invoke specialists,
//! guard and drift-check their output, merge.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agents::{invoke, AgentError, AgentKind, HttpSpecialists, MockSpecialists, Specialist, SpecialistRequest, SpecialistResponse};
use crate::config::PipelineConfig;
use crate::drift::within_drift;
use crate::error::{ConfigError, EmptyInput};
use crate::guards::{detect_fewshot, fact_guard, parse_fact_bullets, sanitize, DeterministicGuard, EditGuard, GuardReason, GuardVerdict};
use crate::heuristics::{analyze, should_skip, QualityProfile, RoutingThresholds};
use crate::lexicon::Lexicons;
use crate::merger::{prepend_facts, Candidate, MergeDecision, Merger, Rejection};
use crate::metrics::Metrics;
use crate::text::TokenizedPrompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Analyze,
    Route,
    Invoke,
    Guard,
    Merge,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Analyze, Stage::Route, Stage::Invoke, Stage::Guard, Stage::Merge];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Analyze => "analyze",
            Stage::Route => "route",
            Stage::Invoke => "invoke",
            Stage::Guard => "guard",
            Stage::Merge => "merge",
        }
    }
}

/// A specialist call that produced no candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationError {
    pub agent: AgentKind,
    pub code: String,
    pub message: String,
}

impl From<&AgentError> for InvocationError {
    fn from(e: &AgentError) -> Self {
        let agent = match e {
            AgentError::Timeout { agent, .. }
            | AgentError::Protocol { agent, .. }
            | AgentError::Transport { agent, .. }
            | AgentError::Template { agent, .. } => *agent,
        };
        InvocationError {
            agent,
            code: e.code().to_owned(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub run_id: String,
    pub input: String,
    pub output: String,
    pub skipped: bool,
    pub profile: QualityProfile,
    pub selected_agents: Vec<AgentKind>,
    pub fewshot_detected: bool,
    pub candidates: Vec<Candidate>,
    /// Fact-Adder abstentions (`NONE`).
    pub abstained: Vec<AgentKind>,
    pub errors: Vec<InvocationError>,
    pub merge: MergeDecision,
    /// Milliseconds per stage; every stage is present.
    pub stage_timings: BTreeMap<Stage, f64>,
    pub config_hash: String,
}

impl OptimizationResult {
    pub fn fell_back(&self) -> bool {
        self.merge.fell_back
    }
}

/// Agents whose threshold the profile crosses, in precedence order.
pub fn select_agents(profile: &QualityProfile, t: &RoutingThresholds) -> Vec<AgentKind> {
    let mut agents = Vec::new();
    if profile.typo > t.tau_typo {
        agents.push(AgentKind::Cleaner);
    }
    if profile.flu < t.tau_flu {
        agents.push(AgentKind::Paraphraser);
    }
    if profile.comp < t.tau_comp {
        agents.push(AgentKind::FactAdder);
    }
    agents
}

/// Outcome of running one specialist path without merging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub agent: AgentKind,
    pub profile: QualityProfile,
    pub response: Option<SpecialistResponse>,
    /// `None` on abstention or invocation failure.
    pub candidate: Option<Candidate>,
    pub error: Option<InvocationError>,
}

/// A configured pipeline. Cheap to clone; safe to share across threads.
#[derive(Clone)]
pub struct Pipeline {
    config: Arc<PipelineConfig>,
    lex: Arc<Lexicons>,
    specialist: Arc<dyn Specialist>,
    guard: Arc<dyn EditGuard>,
    metrics: Metrics,
    config_hash: String,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("config_hash", &self.config_hash)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    /// Validates `config`, loads its data files and selects mock or HTTP
    /// specialists according to `mock_mode`.
    pub fn new(config: PipelineConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let lex = config.lexicons()?;
        let specialist: Arc<dyn Specialist> = if config.mock_mode {
            Arc::new(MockSpecialists::new(lex.clone()))
        } else {
            Arc::new(HttpSpecialists::new(&config.agent_endpoints, config.seed))
        };
        Self::assemble(config, lex, specialist)
    }

    /// Uses `specialist` regardless of `mock_mode`.
    pub fn with_specialist(
        config: PipelineConfig,
        lex: Arc<Lexicons>,
        specialist: Arc<dyn Specialist>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        Self::assemble(config, lex, specialist)
    }

    fn assemble(config: PipelineConfig, lex: Arc<Lexicons>, specialist: Arc<dyn Specialist>) -> Result<Self, ConfigError> {
        Ok(Pipeline {
            config_hash: config.config_hash(&lex),
            guard: Arc::new(DeterministicGuard::new(lex.clone())),
            config: Arc::new(config),
            lex,
            specialist,
            metrics: Metrics::new(),
        })
    }

    /// Same data, specialists and metrics under a different configuration.
    pub fn with_config(&self, config: PipelineConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Pipeline {
            config_hash: config.config_hash(&self.lex),
            config: Arc::new(config),
            ..self.clone()
        })
    }

    pub fn with_guard(mut self, guard: Arc<dyn EditGuard>) -> Self {
        self.guard = guard;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lex
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn merger(&self) -> Merger<'_> {
        Merger {
            budget: &self.config.budget,
            policy: &self.config.drift_policy,
            lex: &self.lex,
        }
    }

    fn request(&self, kind: AgentKind, input: &str) -> SpecialistRequest {
        let mut req = SpecialistRequest::new(kind, input);
        req.generation_cap = self.config.generation_cap;
        req
    }

    fn call(&self, kind: AgentKind, input: &str) -> Result<SpecialistResponse, AgentError> {
        invoke(&self.request(kind, input), self.specialist.as_ref(), self.config.budget.counter)
    }

    /// Sanitizes, guards and drift-checks one specialist output against
    /// `query`. Returns `None` when the Fact-Adder abstains.
    pub fn evaluate(&self, kind: AgentKind, query: &str, raw: &str, profile: &QualityProfile) -> Option<Candidate> {
        let policy = &self.config.drift_policy;
        let stopwords = self.lex.stopwords();
        let rejected = |reason: GuardReason, text: String| Candidate {
            agent: kind,
            raw_output: raw.to_owned(),
            sanitized_text: text,
            bullets: Vec::new(),
            guard: GuardVerdict::fail(reason),
            drift: None,
            drift_reason: None,
            accepted: false,
        };
        if kind == AgentKind::FactAdder {
            let bullets = match parse_fact_bullets(raw, &self.lex) {
                Ok(Some(b)) => b,
                Ok(None) => return None,
                Err(reason) => return Some(rejected(reason, String::new())),
            };
            let filter = fact_guard(&bullets, &self.config.budget, &self.lex);
            if filter.is_none() {
                let reason = filter.rejected.first().map_or(GuardReason::AnswerLeakage, |r| r.1);
                return Some(rejected(reason, String::new()));
            }
            let composed = prepend_facts(query, &filter.kept, &self.config.budget);
            let verdict = within_drift(query, &composed, kind, profile, policy, stopwords).ok();
            let block: Vec<String> = filter.kept.iter().map(|b| format!("- {b}")).collect();
            let repaired = (filter.kept != bullets || block.join("\n") != raw.trim()).then(|| block.join("\n"));
            return Some(Candidate {
                agent: kind,
                raw_output: raw.to_owned(),
                sanitized_text: block.join("\n"),
                bullets: filter.kept,
                guard: GuardVerdict::ok().with_repair(repaired),
                drift: verdict.map(|v| v.report),
                drift_reason: verdict.map(|v| v.reason),
                accepted: true,
            });
        }

        let text = match sanitize(raw, &self.lex) {
            Ok(t) => t,
            Err(reason) => return Some(rejected(reason, String::new())),
        };
        let repaired = (text != raw).then(|| text.clone());
        let guard = self.guard.check(kind, query, &text).with_repair(repaired);
        let verdict = within_drift(query, &text, kind, profile, policy, stopwords).ok();
        let accepted = guard.passed && verdict.is_some_and(|v| v.accepted);
        Some(Candidate {
            agent: kind,
            raw_output: raw.to_owned(),
            sanitized_text: text,
            bullets: Vec::new(),
            guard,
            drift: verdict.map(|v| v.report),
            drift_reason: verdict.map(|v| v.reason),
            accepted,
        })
    }

    /// Runs the optimization pipeline on `x`.
    pub fn optimize(&self, x: &str) -> Result<OptimizationResult, EmptyInput> {
        let result = self.optimize_unrecorded(x)?;
        self.metrics.observe(&result);
        Ok(result)
    }

    fn optimize_unrecorded(&self, x: &str) -> Result<OptimizationResult, EmptyInput> {
        let mut timings: BTreeMap<Stage, f64> = Stage::ALL.iter().map(|s| (*s, 0.0)).collect();
        let mut clock = Instant::now();
        let mut lap = |stage: Stage, timings: &mut BTreeMap<Stage, f64>| {
            timings.insert(stage, clock.elapsed().as_secs_f64() * 1e3);
            clock = Instant::now();
        };

        let tokens = TokenizedPrompt::new(x)?;
        let profile = analyze(&tokens, &self.config.thresholds, &self.lex)?;
        lap(Stage::Analyze, &mut timings);

        let mut result = OptimizationResult {
            run_id: uuid::Uuid::new_v4().to_string(),
            input: x.to_owned(),
            output: x.to_owned(),
            skipped: false,
            profile,
            selected_agents: Vec::new(),
            fewshot_detected: false,
            candidates: Vec::new(),
            abstained: Vec::new(),
            errors: Vec::new(),
            merge: MergeDecision::fallback(x, Vec::new()),
            stage_timings: BTreeMap::new(),
            config_hash: self.config_hash.clone(),
        };
        if should_skip(&profile, &self.config.thresholds) {
            result.skipped = true;
            result.merge.fell_back = false;
            lap(Stage::Route, &mut timings);
            result.stage_timings = timings;
            return Ok(result);
        }
        let selected = select_agents(&profile, &self.config.thresholds);
        let seg = detect_fewshot(x);
        result.fewshot_detected = seg.detected;
        result.selected_agents.clone_from(&selected);
        lap(Stage::Route, &mut timings);
        if selected.is_empty() {
            result.merge.fell_back = false;
            result.stage_timings = timings;
            return Ok(result);
        }

        let query = seg.final_query.as_str();
        let responses: Vec<(AgentKind, Result<SpecialistResponse, AgentError>)> = if selected.len() == 1 {
            vec![(selected[0], self.call(selected[0], query))]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = selected
                    .iter()
                    .map(|&k| (k, s.spawn(move || self.call(k, query))))
                    .collect();
                handles
                    .into_iter()
                    .map(|(k, h)| {
                        let r = h.join().unwrap_or_else(|_| {
                            Err(AgentError::Transport {
                                agent: k,
                                reason: "specialist call panicked".into(),
                            })
                        });
                        (k, r)
                    })
                    .collect()
            })
        };
        lap(Stage::Invoke, &mut timings);

        for (kind, response) in responses {
            match response {
                Ok(resp) if resp.is_none => result.abstained.push(kind),
                Ok(resp) => match self.evaluate(kind, query, &resp.raw_output, &profile) {
                    Some(c) => result.candidates.push(c),
                    None => result.abstained.push(kind),
                },
                Err(e) => result.errors.push(InvocationError::from(&e)),
            }
        }
        lap(Stage::Guard, &mut timings);

        let mut merge = self.merger().merge(x, &result.candidates, &seg, &profile);
        // Abstentions alone are a legitimate no-op, not a fallback.
        if result.candidates.is_empty() && result.errors.is_empty() {
            merge.fell_back = false;
        }
        let mut rejected: Vec<Rejection> = result
            .errors
            .iter()
            .map(|e| Rejection {
                agent: e.agent,
                reason: e.code.clone(),
            })
            .collect();
        rejected.append(&mut merge.rejected);
        merge.rejected = rejected;
        result.output.clone_from(&merge.output);
        result.merge = merge;
        lap(Stage::Merge, &mut timings);
        result.stage_timings = timings;
        Ok(result)
    }

    /// Runs a single specialist path (invoke, sanitize, guard, drift) on
    /// `text` without merging.
    pub fn run_agent(&self, kind: AgentKind, text: &str) -> Result<AgentRun, EmptyInput> {
        let tokens = TokenizedPrompt::new(text)?;
        let profile = analyze(&tokens, &self.config.thresholds, &self.lex)?;
        let mut run = AgentRun {
            agent: kind,
            profile,
            response: None,
            candidate: None,
            error: None,
        };
        match self.call(kind, text) {
            Ok(resp) => {
                if !resp.is_none {
                    run.candidate = self.evaluate(kind, text, &resp.raw_output, &profile);
                }
                run.response = Some(resp);
            }
            Err(e) => run.error = Some(InvocationError::from(&e)),
        }
        Ok(run)
    }
}
