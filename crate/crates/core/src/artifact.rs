//! Append-only JSONL run artifacts, one file per UTC date.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::agents::AgentKind;
use crate::heuristics::QualityProfile;
use crate::merger::{Candidate, MergeDecision};
use crate::pipeline::{InvocationError, OptimizationResult, Stage};

/// Everything needed to audit one request after the fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub run_id: String,
    pub timestamp: DateTime<Utc>,
    pub config_hash: String,
    pub input: String,
    pub output: String,
    pub skipped: bool,
    pub profile: QualityProfile,
    pub selected_agents: Vec<AgentKind>,
    pub fewshot_detected: bool,
    pub candidates: Vec<Candidate>,
    pub abstained: Vec<AgentKind>,
    pub errors: Vec<InvocationError>,
    pub merge: MergeDecision,
    pub stage_timings_ms: BTreeMap<Stage, f64>,
}

impl RunArtifact {
    pub fn from_result(r: &OptimizationResult, timestamp: DateTime<Utc>) -> Self {
        RunArtifact {
            run_id: r.run_id.clone(),
            timestamp,
            config_hash: r.config_hash.clone(),
            input: r.input.clone(),
            output: r.output.clone(),
            skipped: r.skipped,
            profile: r.profile,
            selected_agents: r.selected_agents.clone(),
            fewshot_detected: r.fewshot_detected,
            candidates: r.candidates.clone(),
            abstained: r.abstained.clone(),
            errors: r.errors.clone(),
            merge: r.merge.clone(),
            stage_timings_ms: r.stage_timings.clone(),
        }
    }
}

/// Appends artifacts to `<dir>/runs-YYYY-MM-DD.jsonl`, switching files when
/// the artifact date changes.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    current: Option<(NaiveDate, File)>,
}

impl ArtifactWriter {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ArtifactWriter { dir, current: None })
    }

    pub fn path_for(&self, date: NaiveDate) -> PathBuf {
        self.dir.join(format!("runs-{}.jsonl", date.format("%Y-%m-%d")))
    }

    pub fn append(&mut self, artifact: &RunArtifact) -> std::io::Result<()> {
        let date = artifact.timestamp.date_naive();
        if self.current.as_ref().is_none_or(|(d, _)| *d != date) {
            let file = OpenOptions::new().create(true).append(true).open(self.path_for(date))?;
            self.current = Some((date, file));
        }
        let (_, file) = self.current.as_mut().expect("file opened above");
        let mut line = serde_json::to_vec(artifact).map_err(std::io::Error::other)?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.flush()
    }
}

/// Reads every artifact under `dir`, oldest file first.
pub fn read_artifacts(dir: &Path) -> std::io::Result<Vec<RunArtifact>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("runs-") && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    let mut out = Vec::new();
    for path in files {
        for line in BufReader::new(File::open(&path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
        }
    }
    Ok(out)
}
