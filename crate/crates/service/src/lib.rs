//! HTTP front end for the optimization pipeline.
//!
//! Routes: `POST /infer` runs the full pipeline and persists a run artifact,
//! `POST /clean`, `/paraphrase` and `/fact` run a single specialist path, and
//! `GET /metrics` exposes Prometheus text. Specialist failures never surface
//! as 5xx: the pipeline falls back to the original prompt instead.

use std::collections::BTreeMap;
use std::future::Future;
use std::path::PathBuf;

use axum::extract::rejection::JsonRejection;
use axum::extract::{MatchedPath, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use poaas_core::artifact::{ArtifactWriter, RunArtifact};
use poaas_core::drift::{DriftReason, DriftReport};
use poaas_core::guards::GuardVerdict;
use poaas_core::merger::Rejection;
use poaas_core::{AgentKind, ConfigOverrides, OptimizationResult, Pipeline, Stage};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};

pub const CONFIG_HASH_HEADER: &str = "x-config-hash";

/// Default bind address when neither a flag nor `POAAS_BIND` is given.
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
/// Default artifact directory when `POAAS_ARTIFACT_DIR` is unset.
pub const DEFAULT_ARTIFACT_DIR: &str = "artifacts";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRequest {
    pub prompt: String,
    #[serde(default)]
    pub config_overrides: Option<ConfigOverrides>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    pub run_id: String,
    pub output: String,
    pub skipped: bool,
    pub fell_back: bool,
    pub applied_agents: Vec<AgentKind>,
    pub rejected: Vec<Rejection>,
    pub timings_ms: BTreeMap<Stage, f64>,
    pub added_prompt_tokens: usize,
    pub config_hash: String,
}

impl From<&OptimizationResult> for InferResponse {
    fn from(r: &OptimizationResult) -> Self {
        InferResponse {
            run_id: r.run_id.clone(),
            output: r.output.clone(),
            skipped: r.skipped,
            fell_back: r.fell_back(),
            applied_agents: r.merge.applied_agents.clone(),
            rejected: r.merge.rejected.clone(),
            timings_ms: r.stage_timings.clone(),
            added_prompt_tokens: r.merge.added_prompt_tokens,
            config_hash: r.config_hash.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRequest {
    pub text: String,
}

/// Result of a single specialist path. `output` is the candidate when it was
/// accepted, `NONE` when the Fact-Adder abstained, and the input otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub agent: AgentKind,
    pub output: String,
    pub accepted: bool,
    pub candidate: Option<String>,
    pub guard: Option<GuardVerdict>,
    pub drift: Option<DriftReport>,
    pub drift_reason: Option<DriftReason>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
enum ApiError {
    #[error("{0}")]
    BadRequest(&'static str, String),
    #[error("failed to persist run artifact: {0}")]
    Persist(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            ApiError::BadRequest(code, _) => (StatusCode::BAD_REQUEST, *code),
            ApiError::Persist(_) => (StatusCode::INTERNAL_SERVER_ERROR, "ARTIFACT_WRITE_FAILED"),
        };
        let message = match &self {
            ApiError::BadRequest(_, m) => m.clone(),
            other => other.to_string(),
        };
        (status, Json(ErrorBody { error: code.to_owned(), message })).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::BadRequest("INVALID_JSON", r.body_text())
    }
}

type AppendAck = oneshot::Sender<std::io::Result<()>>;

/// Handle to the single thread that owns the artifact files. Every append is
/// acknowledged after the line is flushed.
#[derive(Clone, Debug)]
pub struct ArtifactSink {
    tx: mpsc::Sender<(Box<RunArtifact>, AppendAck)>,
}

impl ArtifactSink {
    /// Starts the writer thread. It exits once every sink clone is dropped.
    pub fn spawn(dir: impl Into<PathBuf>) -> std::io::Result<(Self, std::thread::JoinHandle<()>)> {
        let mut writer = ArtifactWriter::new(dir)?;
        let (tx, mut rx) = mpsc::channel::<(Box<RunArtifact>, AppendAck)>(256);
        let handle = std::thread::Builder::new().name("artifact-writer".into()).spawn(move || {
            while let Some((artifact, ack)) = rx.blocking_recv() {
                let res = writer.append(&artifact);
                if let Err(e) = &res {
                    tracing::error!(run_id = %artifact.run_id, error = %e, "artifact append failed");
                }
                let _ = ack.send(res);
            }
        })?;
        Ok((ArtifactSink { tx }, handle))
    }

    pub async fn append(&self, artifact: RunArtifact) -> std::io::Result<()> {
        let (ack, done) = oneshot::channel();
        self.tx
            .send((Box::new(artifact), ack))
            .await
            .map_err(|_| std::io::Error::other("artifact writer stopped"))?;
        done.await.map_err(|_| std::io::Error::other("artifact writer stopped"))?
    }
}

#[derive(Clone)]
pub struct AppState {
    pipeline: Pipeline,
    artifacts: ArtifactSink,
}

impl AppState {
    pub fn new(pipeline: Pipeline, artifacts: ArtifactSink) -> Self {
        AppState { pipeline, artifacts }
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/infer", post(infer))
        .route("/clean", post(clean))
        .route("/paraphrase", post(paraphrase))
        .route("/fact", post(fact))
        .route("/metrics", get(metrics))
        .layer(middleware::from_fn_with_state(state.clone(), instrument))
        .with_state(state)
}

async fn instrument(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let route = req
        .extensions()
        .get::<MatchedPath>()
        .map_or_else(|| "unmatched".to_owned(), |p| p.as_str().to_owned());
    let mut res = next.run(req).await;
    state.pipeline.metrics().observe_http(&route, res.status().as_u16());
    if !res.headers().contains_key(CONFIG_HASH_HEADER) {
        if let Ok(v) = HeaderValue::from_str(state.pipeline.config_hash()) {
            res.headers_mut().insert(CONFIG_HASH_HEADER, v);
        }
    }
    res
}

fn require_text(text: &str, field: &str) -> Result<(), ApiError> {
    if text.trim().is_empty() {
        return Err(ApiError::BadRequest("EMPTY_INPUT", format!("`{field}` is empty or whitespace-only")));
    }
    Ok(())
}

async fn run_blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    match tokio::task::spawn_blocking(f).await {
        Ok(v) => v,
        Err(e) => std::panic::resume_unwind(e.into_panic()),
    }
}

async fn infer(
    State(state): State<AppState>,
    body: Result<Json<InferRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    require_text(&req.prompt, "prompt")?;
    let pipeline = match req.config_overrides.filter(|o| !o.is_empty()) {
        Some(o) => {
            let cfg = state
                .pipeline
                .config()
                .with_overrides(&o)
                .map_err(|e| ApiError::BadRequest("INVALID_OVERRIDES", e.to_string()))?;
            state
                .pipeline
                .with_config(cfg)
                .map_err(|e| ApiError::BadRequest("INVALID_OVERRIDES", e.to_string()))?
        }
        None => state.pipeline.clone(),
    };
    let result = run_blocking(move || pipeline.optimize(&req.prompt))
        .await
        .map_err(|e| ApiError::BadRequest("EMPTY_INPUT", e.to_string()))?;
    state
        .artifacts
        .append(RunArtifact::from_result(&result, Utc::now()))
        .await
        .map_err(|e| ApiError::Persist(e.to_string()))?;
    let mut res = Json(InferResponse::from(&result)).into_response();
    if let Ok(v) = HeaderValue::from_str(&result.config_hash) {
        res.headers_mut().insert(CONFIG_HASH_HEADER, v);
    }
    Ok(res)
}

async fn run_agent(
    state: AppState,
    kind: AgentKind,
    body: Result<Json<AgentRequest>, JsonRejection>,
) -> Result<Json<AgentResponse>, ApiError> {
    let Json(req) = body?;
    require_text(&req.text, "text")?;
    let pipeline = state.pipeline.clone();
    let text = req.text.clone();
    let run = run_blocking(move || pipeline.run_agent(kind, &text))
        .await
        .map_err(|e| ApiError::BadRequest("EMPTY_INPUT", e.to_string()))?;
    let abstained = run.response.as_ref().is_some_and(|r| r.is_none);
    let accepted = run.candidate.as_ref().is_some_and(|c| c.accepted);
    let output = match &run.candidate {
        Some(c) if c.accepted => c.sanitized_text.clone(),
        _ if abstained => "NONE".to_owned(),
        _ => req.text,
    };
    Ok(Json(AgentResponse {
        agent: kind,
        output,
        accepted,
        candidate: run.candidate.as_ref().map(|c| c.sanitized_text.clone()),
        guard: run.candidate.as_ref().map(|c| c.guard.clone()),
        drift: run.candidate.as_ref().and_then(|c| c.drift),
        drift_reason: run.candidate.as_ref().and_then(|c| c.drift_reason),
        error: run.error.map(|e| e.code),
    }))
}

async fn clean(
    State(state): State<AppState>,
    body: Result<Json<AgentRequest>, JsonRejection>,
) -> Result<Json<AgentResponse>, ApiError> {
    run_agent(state, AgentKind::Cleaner, body).await
}

async fn paraphrase(
    State(state): State<AppState>,
    body: Result<Json<AgentRequest>, JsonRejection>,
) -> Result<Json<AgentResponse>, ApiError> {
    run_agent(state, AgentKind::Paraphraser, body).await
}

async fn fact(
    State(state): State<AppState>,
    body: Result<Json<AgentRequest>, JsonRejection>,
) -> Result<Json<AgentResponse>, ApiError> {
    run_agent(state, AgentKind::FactAdder, body).await
}

async fn metrics(State(state): State<AppState>) -> impl IntoResponse {
    (
        [(header::CONTENT_TYPE, "text/plain; version=0.0.4; charset=utf-8")],
        state.pipeline.metrics().render(),
    )
}

/// Serves `pipeline` on `listener` until `shutdown` resolves, then drains
/// in-flight requests and waits for pending artifact writes.
pub async fn serve(
    listener: TcpListener,
    pipeline: Pipeline,
    artifact_dir: impl Into<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let (sink, writer) = ArtifactSink::spawn(artifact_dir)?;
    let app = router(AppState::new(pipeline, sink));
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    tokio::task::spawn_blocking(move || writer.join())
        .await
        .map_err(std::io::Error::other)?
        .map_err(|_| std::io::Error::other("artifact writer panicked"))
}

/// Resolves on SIGTERM or Ctrl-C.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        () = ctrl_c => {}
        () = term => {}
    }
    tracing::info!("shutdown signal received, draining");
}
