//! Chat-completion transport for externally hosted specialists.

use std::collections::BTreeMap;
use std::time::Duration;

use serde_json::{json, Value};

use super::{AgentError, AgentKind, Specialist, SpecialistRequest};
use crate::config::EndpointConfig;

const TEMPERATURE: f64 = 0.2;
const TOP_P: f64 = 0.9;

/// One chat-completion endpoint per agent kind. Each call is a single POST
/// with a per-endpoint timeout and no retries.
#[derive(Debug, Clone)]
pub struct HttpSpecialists {
    endpoints: BTreeMap<AgentKind, (EndpointConfig, ureq::Agent)>,
    seed: u64,
}

impl HttpSpecialists {
    pub fn new(endpoints: &BTreeMap<AgentKind, EndpointConfig>, seed: u64) -> Self {
        let endpoints = endpoints
            .iter()
            .map(|(kind, cfg)| {
                let agent: ureq::Agent = ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
                    .build()
                    .into();
                (*kind, (cfg.clone(), agent))
            })
            .collect();
        HttpSpecialists { endpoints, seed }
    }
}

/// Request body in the common chat-completions wire format.
pub fn request_body(model: &str, instruction: &str, max_tokens: usize, seed: u64) -> Value {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": instruction}],
        "max_tokens": max_tokens,
        "temperature": TEMPERATURE,
        "top_p": TOP_P,
        "seed": seed,
    })
}

/// Extracts the generated text from a chat-completion or completion response.
pub fn response_text(body: &Value) -> Option<&str> {
    let choice = body.get("choices")?.get(0)?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
}

impl Specialist for HttpSpecialists {
    fn complete(&self, req: &SpecialistRequest, instruction: &str) -> Result<String, AgentError> {
        let agent_kind = req.kind;
        let (cfg, agent) = self.endpoints.get(&agent_kind).ok_or_else(|| AgentError::Transport {
            agent: agent_kind,
            reason: "no endpoint configured".into(),
        })?;
        let body = request_body(&cfg.model, instruction, req.generation_cap, self.seed);
        let transport = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => AgentError::Timeout {
                agent: agent_kind,
                after_ms: cfg.timeout_ms,
            },
            other => AgentError::Transport {
                agent: agent_kind,
                reason: other.to_string(),
            },
        };
        let response = agent.post(&cfg.url).send_json(&body).map_err(transport)?;
        let value: Value = response.into_body().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) => transport(e),
            other => AgentError::Protocol {
                agent: agent_kind,
                reason: other.to_string(),
            },
        })?;
        response_text(&value)
            .map(str::to_owned)
            .ok_or_else(|| AgentError::Protocol {
                agent: agent_kind,
                reason: "missing choices[0].message.content".into(),
            })
    }
}
