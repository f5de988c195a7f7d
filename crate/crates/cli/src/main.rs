//! `poaas`: score, optimize, corrupt, batch-evaluate and serve prompts.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

mod input;

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use poaas_core::heuristics::{analyze, should_skip};
use poaas_core::report::run_batch;
use poaas_core::{CorruptionMode, CorruptionSpec, Corruptor, Pipeline, PipelineConfig, TokenizedPrompt};
use serde_json::{json, Value};

use crate::input::{parse_lines, read_source, Line};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<poaas_core::ConfigError> for CliError {
    fn from(e: poaas_core::ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Runtime(format!("write failed: {e}"))
}

#[derive(Parser, Debug)]
#[command(name = "poaas", version, about = "Minimal-edit prompt optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Pipeline config file (TOML, or JSON when the extension is .json).
    #[arg(long, env = "POAAS_CONFIG")]
    config: Option<PathBuf>,
    /// Use the deterministic mock specialists.
    #[arg(long)]
    mock: bool,
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// Input file, one prompt per line; stdin when omitted or `-`.
    input: Option<PathBuf>,
    /// Treat input as JSONL and read prompts from this field.
    #[arg(long)]
    field: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Table,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the quality profile and skip decision for each prompt.
    Score {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
    },
    /// Optimize one prompt, or every line of a file.
    Optimize {
        /// Prompt text. Reads `--file` instead when omitted.
        prompt: Option<String>,
        #[arg(long, conflicts_with = "prompt")]
        file: Option<PathBuf>,
        #[arg(long, requires = "file")]
        field: Option<String>,
        /// Print a JSON summary instead of the bare optimized prompt.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Apply seeded token deletion or mixup to a corpus.
    Corrupt {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "delete")]
        mode: CorruptionMode,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Print a per-line affected-token audit to stderr.
        #[arg(long)]
        verbose: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Optimize a corpus and print a JSON batch report.
    Batch {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "POAAS_BIND", default_value = poaas_service::DEFAULT_BIND)]
        bind: String,
        #[arg(long, env = "POAAS_ARTIFACT_DIR", default_value = poaas_service::DEFAULT_ARTIFACT_DIR)]
        artifact_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if args.mock {
        cfg.mock_mode = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) if p != Path::new("-") => Box::new(BufWriter::new(
            std::fs::File::create(p).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", p.display())))?,
        )),
        _ => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn cmd_score(input: &InputArgs, config: &ConfigArgs, format: Format) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let lex = cfg.lexicons()?;
    let lines = parse_lines(&read_source(input.input.as_deref())?, input.field.as_deref(), false)?;
    let mut out = open_output(None)?;
    if matches!(format, Format::Table) && !lines.is_empty() {
        writeln!(out, "{:>5}  {:>5}  {:>5}  {:>5}  {:>5}  {:>5}  skip", "line", "typo", "comp", "flu", "clar", "q")
            .map_err(io_err)?;
    }
    for line in &lines {
        let tokens = TokenizedPrompt::new(&line.text).map_err(|e| CliError::Usage(format!("line {}: {e}", line.number)))?;
        let p = analyze(&tokens, &cfg.thresholds, &lex).map_err(|e| CliError::Usage(e.to_string()))?;
        let skip = should_skip(&p, &cfg.thresholds);
        match format {
            Format::Jsonl => {
                let row = json!({
                    "line": line.number, "typo": p.typo, "comp": p.comp, "flu": p.flu,
                    "clar": p.clar, "q": p.q, "skip": skip,
                });
                writeln!(out, "{row}").map_err(io_err)?;
            }
            Format::Table => writeln!(
                out,
                "{:>5}  {:>5.3}  {:>5.3}  {:>5.3}  {:>5.3}  {:>5.3}  {}",
                line.number, p.typo, p.comp, p.flu, p.clar, p.q, skip
            )
            .map_err(io_err)?,
        }
    }
    out.flush().map_err(io_err)
}

fn summary(line: Option<usize>, r: &poaas_core::OptimizationResult) -> Value {
    let mut v = json!({
        "output": r.output,
        "skipped": r.skipped,
        "fell_back": r.fell_back(),
        "selected_agents": r.selected_agents,
        "applied_agents": r.merge.applied_agents,
        "rejected": r.merge.rejected,
        "added_prompt_tokens": r.merge.added_prompt_tokens,
        "run_id": r.run_id,
    });
    if let Some(n) = line {
        v["line"] = json!(n);
    }
    v
}

fn warn_errors(errors: usize) {
    if errors > 0 {
        eprintln!("warning: {errors} prompt(s) hit specialist errors and fell back to the input");
    }
}

fn cmd_optimize(
    prompt: Option<&str>,
    file: Option<&Path>,
    field: Option<&str>,
    json_out: bool,
    config: &ConfigArgs,
) -> Result<(), CliError> {
    let pipeline = Pipeline::new(load_config(config)?)?;
    let mut out = open_output(None)?;
    let lines = match prompt {
        Some(p) => vec![Line { number: 1, text: p.to_owned(), record: None }],
        None => parse_lines(&read_source(file)?, field, false)?,
    };
    let mut errors = 0;
    for line in &lines {
        let r = pipeline
            .optimize(&line.text)
            .map_err(|e| CliError::Usage(format!("line {}: {e}", line.number)))?;
        errors += usize::from(!r.errors.is_empty());
        if prompt.is_some() && !json_out {
            writeln!(out, "{}", r.output).map_err(io_err)?;
        } else {
            let line_no = prompt.is_none().then_some(line.number);
            writeln!(out, "{}", summary(line_no, &r)).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)?;
    warn_errors(errors);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_corrupt(
    input: &InputArgs,
    mode: CorruptionMode,
    rate: f64,
    seed: u64,
    output: Option<&Path>,
    verbose: bool,
    config: &ConfigArgs,
) -> Result<(), CliError> {
    let spec = CorruptionSpec::new(mode, rate, seed)?;
    let lex = load_config(config)?.lexicons()?;
    let corruptor = Corruptor::new(spec, lex.mixup_vocab())?;
    let lines = parse_lines(&read_source(input.input.as_deref())?, input.field.as_deref(), true)?;
    let mut out = open_output(output)?;
    let mut empty = 0;
    for (index, line) in lines.iter().enumerate() {
        let corrupted = corruptor.corrupt_line(index, &line.text);
        let text = match &corrupted {
            Ok(c) => {
                if verbose {
                    eprintln!("line {}: n={} k={} positions={:?}", line.number, c.n, c.k, c.positions);
                }
                c.text.clone()
            }
            Err(_) => {
                empty += 1;
                line.text.clone()
            }
        };
        match (&line.record, input.field.as_deref()) {
            (Some(record), Some(field)) => {
                let mut record = record.clone();
                record[field] = Value::String(text);
                writeln!(out, "{record}").map_err(io_err)?;
            }
            _ => writeln!(out, "{text}").map_err(io_err)?,
        }
    }
    out.flush().map_err(io_err)?;
    if empty > 0 {
        eprintln!("warning: {empty} empty line(s) passed through unchanged");
    }
    Ok(())
}

fn cmd_batch(input: &InputArgs, output: Option<&Path>, config: &ConfigArgs) -> Result<(), CliError> {
    let pipeline = Pipeline::new(load_config(config)?)?;
    let lines = parse_lines(&read_source(input.input.as_deref())?, input.field.as_deref(), false)?;
    let prompts: Vec<&str> = lines.iter().map(|l| l.text.as_str()).collect();
    let (report, results) = run_batch(&pipeline, &prompts)
        .map_err(|(i, e)| CliError::Usage(format!("line {}: {e}", lines[i].number)))?;
    let mut out = open_output(output)?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out).map_err(io_err)?;
    out.flush().map_err(io_err)?;
    warn_errors(results.iter().filter(|r| !r.errors.is_empty()).count());
    Ok(())
}

fn cmd_serve(bind: &str, artifact_dir: &Path, config: &ConfigArgs) -> Result<(), CliError> {
    let pipeline = Pipeline::new(load_config(config)?)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot bind {bind}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("config_hash={}", pipeline.config_hash());
        println!("listening on http://{addr}");
        std::io::stdout().flush().map_err(io_err)?;
        tracing::info!(%addr, config_hash = pipeline.config_hash(), "serving");
        poaas_service::serve(listener, pipeline, artifact_dir, poaas_service::shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Score { input, config, format } => cmd_score(&input, &config, format),
        Command::Optimize { prompt, file, field, json, config } => {
            if prompt.is_none() && file.is_none() {
                return Err(CliError::Usage("give a prompt or --file".into()));
            }
            cmd_optimize(prompt.as_deref(), file.as_deref(), field.as_deref(), json, &config)
        }
        Command::Corrupt { input, mode, rate, seed, output, verbose, config } => {
            cmd_corrupt(&input, mode, rate, seed, output.as_deref(), verbose, &config)
        }
        Command::Batch { input, output, config } => cmd_batch(&input, output.as_deref(), &config),
        Command::Serve { bind, artifact_dir, config } => cmd_serve(&bind, &artifact_dir, &config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
