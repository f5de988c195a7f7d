//! Minimal-edit prompt optimization.
//!
//! A prompt is scored with cheap lexical heuristics, optionally skipped, routed
//! to role-specialised refinement agents (cleaner, paraphraser, fact adder) and
//! the accepted edits are merged under drift, length and safety guards. Every
//! rejection path returns the original prompt byte-for-byte.

pub mod agents;
pub mod artifact;
pub mod config;
pub mod degradation;
pub mod drift;
pub mod error;
pub mod guards;
pub mod heuristics;
pub mod lexicon;
pub mod merger;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod text;

pub use agents::{AgentKind, MockSpecialists, Specialist, SpecialistRequest, SpecialistResponse};
pub use config::{ConfigOverrides, EndpointConfig, PipelineConfig};
pub use degradation::{CorruptionMode, CorruptionSpec, Corruptor};
pub use drift::{DriftPolicy, DriftReport, DriftVerdict, KeyItems};
pub use error::{ConfigError, EmptyInput};
pub use guards::{FewShotSegmentation, GuardReason, GuardVerdict};
pub use heuristics::{QualityProfile, RoutingThresholds};
pub use lexicon::Lexicons;
pub use merger::{Candidate, MergeDecision, TokenBudget};
pub use metrics::Metrics;
pub use pipeline::{OptimizationResult, Pipeline, Stage};
pub use report::{BatchAggregates, BatchRecord, BatchReport};
pub use text::{TokenCounter, TokenizedPrompt};
