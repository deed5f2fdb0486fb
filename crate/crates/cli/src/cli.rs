//! Command line surface.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use strata_core::config::{load_layered, ConfigError};
use strata_core::consolidate::ConsolidateError;
use strata_core::provider::ProviderError;
use strata_core::query::QueryError;
use strata_core::transcript::{parse_transcript, TranscriptError};
use strata_core::{Engine, EngineConfig, EngineError, Providers};
use strata_eval::dataset::DatasetError;
use strata_eval::{load_dataset, run_eval, Ablation, EvalError, EvalOptions};

use crate::ops::{self, envelope, QueryInput};
use crate::service;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_STORE: u8 = 3;
pub const EXIT_PROVIDER: u8 = 4;
pub const EXIT_AUDIT: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "strata", version, about = "Graph-structured conversational memory")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key (dotted for nested tables). Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Store directory; shorthand for --set store_path=DIR.
    #[arg(long, global = true, value_name = "DIR")]
    pub store: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Append a transcript to memory through the fast path.
    Ingest { file: PathBuf },
    /// Drain the consolidation queue.
    Consolidate {
        #[arg(long)]
        max_items: Option<usize>,
    },
    /// Retrieve context for a question and, with an answerer, answer it.
    Query {
        text: String,
        /// Reference time for relative expressions (defaults to the clock).
        #[arg(long)]
        now: Option<String>,
        /// Retrieval only.
        #[arg(long)]
        no_answer: bool,
        /// Print the full JSON result.
        #[arg(long)]
        json: bool,
    },
    /// Run a QA dataset end to end and report metrics.
    Eval {
        dataset: PathBuf,
        #[arg(long, value_parser = parse_ablation)]
        ablate: Option<Ablation>,
        /// Write the JSON report here and the table next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallel: bool,
    },
    /// Check store invariants.
    Audit,
    /// Serve the HTTP API with a background consolidation worker.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: SocketAddr,
        /// Worker sleep between empty polls, in milliseconds.
        #[arg(long, default_value_t = 200)]
        idle_ms: u64,
    },
    /// Print the effective configuration and its hash.
    Config,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: EvalError| e.to_string())
}

pub fn effective_config(cli: &Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<EngineConfig, ConfigError> {
    let mut overrides = cli.set.clone();
    if let Some(dir) = &cli.store {
        overrides.push(format!("store_path={}", toml_string(&dir.display().to_string())));
    }
    load_layered(cli.config.as_deref(), env, &overrides)
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn open(config: &EngineConfig) -> anyhow::Result<Engine> {
    let providers = Providers::from_config(config).map_err(EngineError::from)?;
    Ok(Engine::open(config.clone(), providers)?)
}

fn print_json<T: serde::Serialize>(out: &mut impl Write, value: &T) -> anyhow::Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Runs one parsed command, writing normal output to `out`. Returns the
/// process exit code for outcomes that are not errors (audit findings,
/// provider failures that still produced a context).
pub fn run(cli: &Cli, env: impl IntoIterator<Item = (String, String)>, out: &mut impl Write) -> anyhow::Result<u8> {
    let config = effective_config(cli, env)?;
    match &cli.command {
        Command::Config => {
            write!(out, "# config_hash = {}\n{}", config.hash(), config.to_toml())?;
            Ok(EXIT_OK)
        }
        Command::Ingest { file } => {
            let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
            let turns = parse_transcript(&text)?;
            let engine = open(&config)?;
            let res = ops::ingest(&engine, &turns);
            engine.save()?;
            let r = res?;
            writeln!(out, "ingested {} turns as {} events; store has {} events, queue {}", r.turns, r.ids.len(), r.events, r.queue_len)?;
            Ok(EXIT_OK)
        }
        Command::Consolidate { max_items } => {
            let engine = open(&config)?;
            let res = ops::consolidate(&engine, *max_items);
            engine.save()?;
            let r = res?;
            let s = &r.summary;
            let edges: Vec<String> = s.edges_added.iter().map(|(t, n)| format!("{t}={n}")).collect();
            writeln!(
                out,
                "processed {} skipped {} requeued {} abandoned {}; provider calls {}; edges added [{}]; queue {}",
                s.processed,
                s.skipped,
                s.requeued,
                s.abandoned,
                s.provider_calls,
                edges.join(" "),
                r.queue_len
            )?;
            for e in &s.errors {
                writeln!(out, "error: {e}")?;
            }
            Ok(if s.abandoned > 0 { EXIT_PROVIDER } else { EXIT_OK })
        }
        Command::Query { text, now, no_answer, json } => {
            let now = ops::parse_now(now.as_deref()).map_err(|e| anyhow::anyhow!(UsageError(format!("--now: {e}"))))?;
            let engine = open(&config)?;
            let input = QueryInput { question: text.clone(), now, answer: !no_answer };
            let r = ops::query(&engine, &input)?;
            if !r.written_back.is_empty() {
                engine.save()?;
            }
            if *json {
                print_json(out, &envelope(&engine, &r))?;
            } else {
                let window = r.window.as_ref().map_or_else(|| "-".to_string(), |w| format!("{} .. {}", w.start, w.end));
                writeln!(
                    out,
                    "intent: {}  window: {}  anchors: {}  visited: {}  tokens: {}{}",
                    r.intent,
                    window,
                    r.diagnostics.anchors.len(),
                    r.diagnostics.visited,
                    r.token_count,
                    if r.diagnostics.fallback { "  (fallback anchors)" } else { "" }
                )?;
                writeln!(out, "{}", r.context)?;
                if let Some(a) = &r.answer {
                    writeln!(out, "answer: {a}")?;
                }
                if let Some(e) = &r.answer_error {
                    writeln!(out, "answer error: {e}")?;
                }
            }
            Ok(if r.provider_failed() { EXIT_PROVIDER } else { EXIT_OK })
        }
        Command::Eval { dataset, ablate, out: path, parallel } => {
            let data = load_dataset(dataset)?;
            let report = run_eval(&data, &config, &EvalOptions { ablation: *ablate, parallel: *parallel })?;
            let table = report.render_table();
            if let Some(path) = path {
                std::fs::write(path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
                std::fs::write(path.with_extension("txt"), &table)?;
            }
            write!(out, "{table}")?;
            writeln!(out, "report hash: {}", report.report_hash)?;
            Ok(EXIT_OK)
        }
        Command::Audit => {
            let engine = open(&config)?;
            let r = ops::audit(&engine);
            writeln!(out, "{} violations", r.count)?;
            for v in &r.violations {
                writeln!(out, "{v}")?;
            }
            Ok(if r.count == 0 { EXIT_OK } else { EXIT_AUDIT })
        }
        Command::Serve { addr, idle_ms } => {
            let engine = Arc::new(open(&config)?);
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(service::serve(engine, *addr, Duration::from_millis(*idle_ms), shutdown_signal()))?;
            Ok(EXIT_OK)
        }
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Bad input that is not a config problem, reported with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn engine_code(e: &EngineError) -> u8 {
    match e {
        EngineError::Config(_) | EngineError::Query(QueryError::EmptyQuery) => EXIT_USAGE,
        EngineError::Provider(_) | EngineError::Consolidate(ConsolidateError::Provider { .. }) => EXIT_PROVIDER,
        _ => EXIT_STORE,
    }
}

/// Maps an error chain to the documented exit codes.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<EngineError>() {
            return engine_code(e);
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::Engine { source, .. } | EvalError::Setup(source) => engine_code(source),
                EvalError::MissingProvider { .. } => EXIT_PROVIDER,
                EvalError::Temperature { .. } | EvalError::UnknownAblation(_) => EXIT_USAGE,
            };
        }
        if cause.is::<ProviderError>() {
            return EXIT_PROVIDER;
        }
        if cause.is::<ConfigError>() || cause.is::<UsageError>() || cause.is::<TranscriptError>() || cause.is::<DatasetError>() {
            return EXIT_USAGE;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_USAGE;
        }
    }
    1
}
