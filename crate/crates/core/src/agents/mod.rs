//! Specialist agents behind a uniform invocation contract.
//!
//! A [`Specialist`] turns a rendered instruction into raw text. Deterministic
//! mocks run offline; [`HttpSpecialists`] calls chat-completion endpoints.

mod http;
mod mock;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpSpecialists;
pub use mock::MockSpecialists;

use crate::error::ConfigError;
use crate::guards::is_none_output;
use crate::text::TokenCounter;

/// Output token cap for every specialist call.
pub const GENERATION_CAP: usize = 512;
/// Default per-call timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Specialist roles, declared in merge precedence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Cleaner,
    Paraphraser,
    FactAdder,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Cleaner, AgentKind::Paraphraser, AgentKind::FactAdder];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Cleaner => "cleaner",
            AgentKind::Paraphraser => "paraphraser",
            AgentKind::FactAdder => "fact_adder",
        }
    }

    pub fn default_template(self) -> &'static str {
        match self {
            AgentKind::Cleaner => "cleaner.v1",
            AgentKind::Paraphraser => "paraphraser.v1",
            AgentKind::FactAdder => "fact_adder.v1",
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown agent `{s}` (expected cleaner, paraphraser or fact_adder)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialistRequest {
    pub kind: AgentKind,
    /// The editable text: the final query span for few-shot prompts.
    pub input_text: String,
    pub instruction_template_id: String,
    pub generation_cap: usize,
}

impl SpecialistRequest {
    pub fn new(kind: AgentKind, input_text: impl Into<String>) -> Self {
        SpecialistRequest {
            kind,
            input_text: input_text.into(),
            instruction_template_id: kind.default_template().to_owned(),
            generation_cap: GENERATION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistResponse {
    pub raw_output: String,
    pub latency_ms: f64,
    pub output_token_estimate: usize,
    /// Fact-Adder abstention (`NONE`).
    pub is_none: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("{agent} timed out after {after_ms} ms")]
    Timeout { agent: AgentKind, after_ms: u64 },
    #[error("{agent} returned a malformed response: {reason}")]
    Protocol { agent: AgentKind, reason: String },
    #[error("{agent} transport failed: {reason}")]
    Transport { agent: AgentKind, reason: String },
    #[error("{agent}: {reason}")]
    Template { agent: AgentKind, reason: String },
}

impl AgentError {
    /// Stable label used in metrics and artifacts.
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::Timeout { .. } => "AGENT_TIMEOUT",
            AgentError::Protocol { .. } => "AGENT_PROTOCOL_ERROR",
            AgentError::Transport { .. } => "AGENT_TRANSPORT_ERROR",
            AgentError::Template { .. } => "AGENT_TEMPLATE_ERROR",
        }
    }
}

/// Produces raw specialist output for a request and its rendered instruction.
pub trait Specialist: Send + Sync {
    fn complete(&self, req: &SpecialistRequest, instruction: &str) -> Result<String, AgentError>;
}

const CLEANER_V1: &str = "\
Fix spelling, typos, spacing and grammar in the text below. Make the smallest \
change that repairs it. Do not add information, do not answer it, and keep \
every number, name, quote and link. If it is a question, keep it a question. \
Return only the corrected text.

Text:
{input}";

const PARAPHRASER_V1: &str = "\
Rewrite the text below so it reads clearly and fluently while keeping its exact \
meaning. Make minimal changes. Keep every constraint, number, name, quote and \
link, add nothing new, and do not answer it. If it is a question, keep it a \
question. Return only the rewritten text.

Text:
{input}";

const FACT_ADDER_V1: &str = "\
List up to 3 short, declarative background facts that help with the request \
below, one per line starting with \"- \", at most 120 tokens in total. State \
facts only: no reasoning steps, no calculations, no answer to the request and \
no answer options. If you are unsure, reply with exactly NONE.

Request:
{input}";

fn template(id: &str) -> Option<&'static str> {
    match id {
        "cleaner.v1" => Some(CLEANER_V1),
        "paraphraser.v1" => Some(PARAPHRASER_V1),
        "fact_adder.v1" => Some(FACT_ADDER_V1),
        _ => None,
    }
}

/// Fills the instruction template `template_id` with `input_text`.
pub fn render_instruction(template_id: &str, input_text: &str) -> Result<String, ConfigError> {
    template(template_id)
        .map(|t| t.replacen("{input}", input_text, 1))
        .ok_or_else(|| ConfigError::UnknownTemplate(template_id.to_owned()))
}

/// Renders the instruction, calls the specialist and measures the call.
pub fn invoke(
    req: &SpecialistRequest,
    specialist: &dyn Specialist,
    counter: TokenCounter,
) -> Result<SpecialistResponse, AgentError> {
    let instruction = render_instruction(&req.instruction_template_id, &req.input_text).map_err(|e| {
        AgentError::Template {
            agent: req.kind,
            reason: e.to_string(),
        }
    })?;
    let started = Instant::now();
    let raw_output = specialist.complete(req, &instruction)?;
    let latency_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(SpecialistResponse {
        output_token_estimate: counter.count(&raw_output),
        is_none: req.kind == AgentKind::FactAdder && is_none_output(&raw_output),
        raw_output,
        latency_ms,
    })
}

/// Fixed per-agent responses, for fault injection and tests.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSpecialists {
    responses: BTreeMap<AgentKind, Result<String, AgentError>>,
}

impl ScriptedSpecialists {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn respond(mut self, kind: AgentKind, output: impl Into<String>) -> Self {
        self.responses.insert(kind, Ok(output.into()));
        self
    }

    pub fn fail(mut self, kind: AgentKind, error: AgentError) -> Self {
        self.responses.insert(kind, Err(error));
        self
    }

    /// Every agent fails with a transport error.
    pub fn unreachable() -> Self {
        AgentKind::ALL.into_iter().fold(Self::new(), |s, k| {
            s.fail(
                k,
                AgentError::Transport {
                    agent: k,
                    reason: "connection refused".into(),
                },
            )
        })
    }
}

impl Specialist for ScriptedSpecialists {
    fn complete(&self, req: &SpecialistRequest, _instruction: &str) -> Result<String, AgentError> {
        self.responses.get(&req.kind).cloned().unwrap_or_else(|| {
            Err(AgentError::Transport {
                agent: req.kind,
                reason: "no scripted response".into(),
            })
        })
    }
}
