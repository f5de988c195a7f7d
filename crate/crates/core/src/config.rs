//! Pipeline configuration, validation, overrides and the configuration hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::agents::{AgentKind, DEFAULT_TIMEOUT, GENERATION_CAP};
use crate::drift::DriftPolicy;
use crate::error::ConfigError;
use crate::heuristics::RoutingThresholds;
use crate::lexicon::Lexicons;
use crate::merger::TokenBudget;

/// One specialist endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_model() -> String {
    "specialist".to_owned()
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT.as_millis() as u64
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            model: default_model(),
            timeout_ms: default_timeout_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub thresholds: RoutingThresholds,
    pub drift_policy: DriftPolicy,
    pub budget: TokenBudget,
    /// Output-token cap per specialist call.
    pub generation_cap: usize,
    pub mock_mode: bool,
    /// Sampling seed forwarded to specialist endpoints.
    pub seed: u64,
    pub agent_endpoints: BTreeMap<AgentKind, EndpointConfig>,
    /// Directory overriding the embedded data files. Not part of the hash;
    /// the file digests are.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            thresholds: RoutingThresholds::default(),
            drift_policy: DriftPolicy::default(),
            budget: TokenBudget::default(),
            generation_cap: GENERATION_CAP,
            mock_mode: false,
            seed: 0,
            agent_endpoints: BTreeMap::new(),
            data_dir: None,
        }
    }
}

/// Per-request overrides, limited to thresholds, drift caps and budgets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default)]
    pub thresholds: Option<Map<String, Value>>,
    #[serde(default)]
    pub drift_policy: Option<Map<String, Value>>,
    #[serde(default)]
    pub budget: Option<Map<String, Value>>,
}

impl ConfigOverrides {
    pub fn is_empty(&self) -> bool {
        self.thresholds.is_none() && self.drift_policy.is_none() && self.budget.is_none()
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.thresholds.validate()?;
        self.drift_policy.validate()?;
        self.budget.validate()?;
        if self.generation_cap == 0 {
            return Err(ConfigError::invalid("generation_cap", "must be at least 1"));
        }
        for ep in self.agent_endpoints.values() {
            if !(ep.url.starts_with("http://") || ep.url.starts_with("https://")) {
                return Err(ConfigError::invalid(
                    "agent_endpoints.url",
                    format!("`{}` is not an http(s) URL", ep.url),
                ));
            }
            if ep.timeout_ms == 0 {
                return Err(ConfigError::invalid("agent_endpoints.timeout_ms", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = serde_json::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    /// Applies `POAAS_MOCK`, `POAAS_DATA_DIR` and `POAAS_{CLEANER,PARAPHRASER,FACT_ADDER}_URL`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = var("POAAS_MOCK") {
            self.mock_mode = match v.trim().to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => true,
                "0" | "false" | "no" | "off" | "" => false,
                other => return Err(ConfigError::invalid("POAAS_MOCK", format!("`{other}` is not a boolean"))),
            };
        }
        if let Some(dir) = var("POAAS_DATA_DIR").filter(|d| !d.is_empty()) {
            self.data_dir = Some(PathBuf::from(dir));
        }
        for kind in AgentKind::ALL {
            let key = format!("POAAS_{}_URL", kind.name().to_ascii_uppercase());
            if let Some(url) = var(&key).filter(|u| !u.is_empty()) {
                self.agent_endpoints
                    .entry(kind)
                    .and_modify(|e| e.url.clone_from(&url))
                    .or_insert_with(|| EndpointConfig::new(url));
            }
        }
        self.validate()
    }

    /// Returns a validated copy with `overrides` merged in.
    pub fn with_overrides(&self, overrides: &ConfigOverrides) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let sections = [
            ("thresholds", &overrides.thresholds),
            ("drift_policy", &overrides.drift_policy),
            ("budget", &overrides.budget),
        ];
        for (name, patch) in sections {
            if let (Some(patch), Some(Value::Object(target))) = (patch, value.get_mut(name)) {
                for (k, v) in patch {
                    target.insert(k.clone(), v.clone());
                }
            }
        }
        let cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON of the hashed fields.
    pub fn canonical_json(&self) -> String {
        let mut hashed = self.clone();
        hashed.data_dir = None;
        serde_json::to_string(&hashed).expect("config serializes")
    }

    /// SHA-256 over the canonical config and every data-file digest.
    pub fn config_hash(&self, lex: &Lexicons) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_json().as_bytes());
        for (file, digest) in lex.digests() {
            h.update(format!("\n{file}={digest}").as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Data files for this configuration.
    pub fn lexicons(&self) -> Result<Arc<Lexicons>, ConfigError> {
        match &self.data_dir {
            Some(dir) => Lexicons::from_dir(dir).map(Arc::new),
            None => Ok(Lexicons::shared()),
        }
    }
}
