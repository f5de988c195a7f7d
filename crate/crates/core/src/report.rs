//! Batch runs and their versioned JSON report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::AgentKind;
use crate::error::EmptyInput;
use crate::pipeline::{OptimizationResult, Pipeline};

pub const REPORT_VERSION: u32 = 1;

/// Per-prompt summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub index: usize,
    pub run_id: String,
    pub input: String,
    pub output: String,
    pub skipped: bool,
    pub fell_back: bool,
    pub selected_agents: Vec<AgentKind>,
    pub applied_agents: Vec<AgentKind>,
    /// Specialist calls made for this prompt.
    pub specialist_calls: usize,
    pub added_prompt_tokens: usize,
    pub fact_tokens: usize,
    /// Sum of stage timings.
    pub refinement_ms: f64,
}

impl BatchRecord {
    pub fn from_result(index: usize, r: &OptimizationResult) -> Self {
        BatchRecord {
            index,
            run_id: r.run_id.clone(),
            input: r.input.clone(),
            output: r.output.clone(),
            skipped: r.skipped,
            fell_back: r.merge.fell_back,
            selected_agents: r.selected_agents.clone(),
            applied_agents: r.merge.applied_agents.clone(),
            specialist_calls: r.selected_agents.len(),
            added_prompt_tokens: r.merge.added_prompt_tokens,
            fact_tokens: r.merge.fact_tokens,
            refinement_ms: r.stage_timings.values().sum(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchAggregates {
    pub count: usize,
    pub skip_rate: f64,
    pub fallback_rate: f64,
    pub mean_specialist_calls: f64,
    pub mean_added_prompt_tokens: f64,
    pub mean_refinement_ms: f64,
    /// Share of prompts that selected each agent.
    pub selection_rate: BTreeMap<AgentKind, f64>,
    /// Share of prompts whose output includes each agent's edit.
    pub applied_rate: BTreeMap<AgentKind, f64>,
}

impl BatchAggregates {
    pub fn from_records(records: &[BatchRecord]) -> Self {
        let n = records.len();
        if n == 0 {
            return BatchAggregates::default();
        }
        let mean = |f: &dyn Fn(&BatchRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
        let rate = |f: &dyn Fn(&BatchRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / n as f64;
        BatchAggregates {
            count: n,
            skip_rate: rate(&|r| r.skipped),
            fallback_rate: rate(&|r| r.fell_back),
            mean_specialist_calls: mean(&|r| r.specialist_calls as f64),
            mean_added_prompt_tokens: mean(&|r| r.added_prompt_tokens as f64),
            mean_refinement_ms: mean(&|r| r.refinement_ms),
            selection_rate: AgentKind::ALL
                .iter()
                .map(|k| (*k, rate(&|r| r.selected_agents.contains(k))))
                .collect(),
            applied_rate: AgentKind::ALL
                .iter()
                .map(|k| (*k, rate(&|r| r.applied_agents.contains(k))))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub report_version: u32,
    pub config_hash: String,
    pub records: Vec<BatchRecord>,
    pub aggregates: BatchAggregates,
}

/// Optimizes every prompt in parallel; records keep input order. Fails on
/// the first empty prompt, reporting its index.
pub fn run_batch<S: AsRef<str> + Sync>(
    pipeline: &Pipeline,
    prompts: &[S],
) -> Result<(BatchReport, Vec<OptimizationResult>), (usize, EmptyInput)> {
    let results: Vec<OptimizationResult> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| pipeline.optimize(p.as_ref()).map_err(|e| (i, e)))
        .collect::<Result<_, _>>()?;
    let records: Vec<BatchRecord> = results
        .iter()
        .enumerate()
        .map(|(i, r)| BatchRecord::from_result(i, r))
        .collect();
    let report = BatchReport {
        report_version: REPORT_VERSION,
        config_hash: pipeline.config_hash().to_owned(),
        aggregates: BatchAggregates::from_records(&records),
        records,
    };
    Ok((report, results))
}
