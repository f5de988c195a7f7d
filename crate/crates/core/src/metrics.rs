//! Prometheus instrumentation for the pipeline and the HTTP service.

use prometheus::{
    Encoder, Histogram, HistogramOpts, HistogramVec, IntCounter, IntCounterVec, Opts, Registry, TextEncoder,
};

use crate::agents::AgentKind;
use crate::pipeline::{OptimizationResult, Stage};

const STAGE_BUCKETS: [f64; 12] = [
    0.000_05, 0.000_1, 0.000_25, 0.000_5, 0.001, 0.002_5, 0.005, 0.01, 0.05, 0.25, 1.0, 10.0,
];
const TOKEN_BUCKETS: [f64; 12] = [0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 240.0];

/// Counters and histograms on a private registry. All updates are atomic.
#[derive(Clone)]
pub struct Metrics {
    registry: Registry,
    requests: IntCounter,
    skipped: IntCounter,
    fallbacks: IntCounter,
    specialist_calls: IntCounterVec,
    specialist_errors: IntCounterVec,
    applied: IntCounterVec,
    rejections: IntCounterVec,
    stage_seconds: HistogramVec,
    added_tokens: Histogram,
    http_requests: IntCounterVec,
}

impl std::fmt::Debug for Metrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Metrics").field("requests", &self.requests.get()).finish_non_exhaustive()
    }
}

impl Default for Metrics {
    fn default() -> Self {
        Self::new()
    }
}

fn counter(registry: &Registry, name: &str, help: &str) -> IntCounter {
    let c = IntCounter::new(name, help).expect("valid metric");
    registry.register(Box::new(c.clone())).expect("unique metric");
    c
}

fn counter_vec(registry: &Registry, name: &str, help: &str, labels: &[&str]) -> IntCounterVec {
    let c = IntCounterVec::new(Opts::new(name, help), labels).expect("valid metric");
    registry.register(Box::new(c.clone())).expect("unique metric");
    c
}

impl Metrics {
    pub fn new() -> Self {
        let registry = Registry::new();
        let stage_seconds = HistogramVec::new(
            HistogramOpts::new("poaas_stage_duration_seconds", "Pipeline stage latency.")
                .buckets(STAGE_BUCKETS.to_vec()),
            &["stage"],
        )
        .expect("valid metric");
        registry.register(Box::new(stage_seconds.clone())).expect("unique metric");
        let added_tokens = Histogram::with_opts(
            HistogramOpts::new("poaas_added_prompt_tokens", "Prompt tokens added per optimized request.")
                .buckets(TOKEN_BUCKETS.to_vec()),
        )
        .expect("valid metric");
        registry.register(Box::new(added_tokens.clone())).expect("unique metric");
        Metrics {
            requests: counter(&registry, "poaas_requests_total", "Optimization requests."),
            skipped: counter(&registry, "poaas_skipped_total", "Requests returned unchanged by the skip gate."),
            fallbacks: counter(&registry, "poaas_fallback_total", "Requests that fell back to the original prompt."),
            specialist_calls: counter_vec(&registry, "poaas_specialist_calls_total", "Specialist invocations.", &["agent"]),
            specialist_errors: counter_vec(
                &registry,
                "poaas_specialist_errors_total",
                "Specialist invocations that failed.",
                &["agent", "error"],
            ),
            applied: counter_vec(&registry, "poaas_applied_total", "Edits applied to the final prompt.", &["agent"]),
            rejections: counter_vec(
                &registry,
                "poaas_rejections_total",
                "Candidate rejections by reason.",
                &["agent", "reason"],
            ),
            http_requests: counter_vec(&registry, "poaas_http_requests_total", "HTTP requests.", &["route", "status"]),
            stage_seconds,
            added_tokens,
            registry,
        }
    }

    /// Records one pipeline run.
    pub fn observe(&self, result: &OptimizationResult) {
        self.requests.inc();
        if result.skipped {
            self.skipped.inc();
        }
        if result.merge.fell_back && !result.skipped {
            self.fallbacks.inc();
        }
        for agent in &result.selected_agents {
            self.specialist_calls.with_label_values(&[agent.name()]).inc();
        }
        for err in &result.errors {
            self.specialist_errors.with_label_values(&[err.agent.name(), &err.code]).inc();
        }
        for agent in &result.merge.applied_agents {
            self.applied.with_label_values(&[agent.name()]).inc();
        }
        for r in &result.merge.rejected {
            self.rejections.with_label_values(&[r.agent.name(), &r.reason]).inc();
        }
        for (stage, ms) in &result.stage_timings {
            self.stage_seconds.with_label_values(&[stage.name()]).observe(ms / 1e3);
        }
        self.added_tokens.observe(result.merge.added_prompt_tokens as f64);
    }

    pub fn observe_http(&self, route: &str, status: u16) {
        self.http_requests.with_label_values(&[route, &status.to_string()]).inc();
    }

    pub fn requests(&self) -> u64 {
        self.requests.get()
    }

    pub fn skipped(&self) -> u64 {
        self.skipped.get()
    }

    pub fn fallbacks(&self) -> u64 {
        self.fallbacks.get()
    }

    pub fn specialist_calls(&self, agent: AgentKind) -> u64 {
        self.specialist_calls.with_label_values(&[agent.name()]).get()
    }

    pub fn applied(&self, agent: AgentKind) -> u64 {
        self.applied.with_label_values(&[agent.name()]).get()
    }

    pub fn stage_count(&self, stage: Stage) -> u64 {
        self.stage_seconds.with_label_values(&[stage.name()]).get_sample_count()
    }

    pub fn added_tokens_sum(&self) -> f64 {
        self.added_tokens.get_sample_sum()
    }

    /// Prometheus text exposition of every metric.
    pub fn render(&self) -> String {
        let mut buf = Vec::new();
        TextEncoder::new()
            .encode(&self.registry.gather(), &mut buf)
            .expect("text encoding cannot fail");
        String::from_utf8(buf).expect("exposition is UTF-8")
    }
}
