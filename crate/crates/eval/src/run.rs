//! End-to-end evaluation: build a store per conversation through the fast
//! path, drain consolidation, then answer, judge and score every question.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use strata_core::engine::VERSION;
use strata_core::model::{EdgeType, Timestamp};
use strata_core::provider::{answer_request, ProviderKind};
use strata_core::query::{estimate_tokens, RetrievalConfig, WeightTable};
use strata_core::{Engine, EngineConfig, EngineError, Providers};
use thiserror::Error;

use crate::dataset::{Category, Conversation, Dataset, QASample};
use crate::metrics::{bleu1, token_f1};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{role} provider is disabled; evaluation needs every role configured")]
    MissingProvider { role: &'static str },
    #[error("{role} temperature is {temperature}; evaluation runs at temperature 0")]
    Temperature { role: &'static str, temperature: f64 },
    #[error("unknown ablation {0:?} (expected no-causal, no-temporal, no-entity or no-adaptive)")]
    UnknownAblation(String),
    #[error("conversation {conversation}: {source}")]
    Engine { conversation: String, source: EngineError },
    #[error(transparent)]
    Setup(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    NoCausal,
    NoTemporal,
    NoEntity,
    NoAdaptive,
}

impl Ablation {
    pub fn label(self) -> &'static str {
        match self {
            Ablation::NoCausal => "no-causal",
            Ablation::NoTemporal => "no-temporal",
            Ablation::NoEntity => "no-entity",
            Ablation::NoAdaptive => "no-adaptive",
        }
    }

    pub fn note(self) -> &'static str {
        match self {
            Ablation::NoCausal => "CAUSAL edges excluded from traversal",
            Ablation::NoTemporal => "TEMPORAL edges excluded from traversal",
            Ablation::NoEntity => "ENTITY edges excluded from traversal",
            Ablation::NoAdaptive => "uniform edge-type weights for every intent",
        }
    }

    pub fn apply(self, cfg: &mut RetrievalConfig) {
        match self {
            Ablation::NoCausal => cfg.policy.excluded.push(EdgeType::Causal),
            Ablation::NoTemporal => cfg.policy.excluded.push(EdgeType::Temporal),
            Ablation::NoEntity => cfg.policy.excluded.push(EdgeType::Entity),
            Ablation::NoAdaptive => cfg.policy.weights = WeightTable::uniform(),
        }
    }
}

impl FromStr for Ablation {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "no-causal" => Ablation::NoCausal,
            "no-temporal" => Ablation::NoTemporal,
            "no-entity" => Ablation::NoEntity,
            "no-adaptive" => Ablation::NoAdaptive,
            other => return Err(EvalError::UnknownAblation(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub ablation: Option<Ablation>,
    /// Evaluate conversations on separate threads. Each conversation has its
    /// own store, so ingestion never interleaves with queries on one store.
    pub parallel: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordTimings {
    pub plan_us: u64,
    pub anchors_us: u64,
    pub traverse_us: u64,
    pub linearize_us: u64,
    pub answer_us: u64,
    pub judge_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub conversation: String,
    pub question: String,
    pub category: Category,
    pub gold: String,
    pub answer: String,
    pub intent: String,
    /// Absent when the judge could not produce a score.
    pub judge: Option<f64>,
    pub judge_reasoning: String,
    pub f1: f64,
    pub bleu1: f64,
    pub context_tokens: usize,
    pub prompt_tokens: usize,
    pub fallback: bool,
    pub visited: usize,
    pub edge_types: BTreeMap<String, usize>,
    pub written_back: usize,
    pub error: Option<String>,
    pub timings: RecordTimings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub judged: usize,
    pub judge_mean: f64,
    pub f1_mean: f64,
    pub bleu1_mean: f64,
}

impl Aggregate {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a SampleRecord>) -> Aggregate {
        let mut a = Aggregate::default();
        let (mut judge, mut f1, mut bleu) = (0.0, 0.0, 0.0);
        for r in records {
            a.count += 1;
            f1 += r.f1;
            bleu += r.bleu1;
            if let Some(j) = r.judge {
                a.judged += 1;
                judge += j;
            }
        }
        if a.count > 0 {
            a.f1_mean = f1 / a.count as f64;
            a.bleu1_mean = bleu / a.count as f64;
        }
        if a.judged > 0 {
            a.judge_mean = judge / a.judged as f64;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub conversation: String,
    pub turns: usize,
    pub events: usize,
    pub entities: usize,
    pub edges: BTreeMap<String, usize>,
    pub consolidated: usize,
    pub consolidation_failures: usize,
    pub audit_violations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub mean_context_tokens: f64,
    pub max_context_tokens: usize,
    pub mean_prompt_tokens: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub ingest_us: u64,
    pub consolidate_us: u64,
    pub mean_plan_us: f64,
    pub mean_anchors_us: f64,
    pub mean_traverse_us: f64,
    pub mean_linearize_us: f64,
    pub mean_answer_us: f64,
    pub mean_judge_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub engine_version: String,
    pub dataset: String,
    pub variant: String,
    pub variant_note: String,
    pub loop_write_back: bool,
    pub config_hash: String,
    pub config: EngineConfig,
    pub generated_at: String,
    pub overall: Aggregate,
    pub categories: BTreeMap<Category, Aggregate>,
    pub tokens: TokenUsage,
    pub latency: Latency,
    pub builds: Vec<BuildSummary>,
    pub records: Vec<SampleRecord>,
    /// SHA-256 over the report with timing and clock fields removed.
    pub report_hash: String,
}

/// Fields that depend on the wall clock and are left out of the hash.
const VOLATILE: [&str; 3] = ["generated_at", "latency", "report_hash"];

impl RunReport {
    pub fn deterministic_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        let map = v.as_object_mut().expect("report is an object");
        for k in VOLATILE {
            map.remove(k);
        }
        if let Some(Value::Array(records)) = map.get_mut("records") {
            for r in records {
                if let Some(obj) = r.as_object_mut() {
                    obj.remove("timings");
                }
            }
        }
        v
    }

    pub fn compute_hash(&self) -> String {
        let text = serde_json::to_string(&self.deterministic_json()).expect("report serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text summary.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset: {}  variant: {}  config: {}", self.dataset, self.variant, &self.config_hash[..12.min(self.config_hash.len())]);
        if !self.variant_note.is_empty() {
            let _ = writeln!(out, "note: {}", self.variant_note);
        }
        let _ = writeln!(out, "{:<12} {:>5} {:>7} {:>7} {:>7}", "category", "n", "judge", "f1", "bleu1");
        let row = |out: &mut String, name: &str, a: &Aggregate| {
            let judge = if a.judged > 0 { format!("{:.3}", a.judge_mean) } else { "-".into() };
            let _ = writeln!(out, "{:<12} {:>5} {:>7} {:>7.3} {:>7.3}", name, a.count, judge, a.f1_mean, a.bleu1_mean);
        };
        for (c, a) in &self.categories {
            row(&mut out, c.as_str(), a);
        }
        row(&mut out, "overall", &self.overall);
        let _ = writeln!(
            out,
            "tokens/query: context {:.1} (max {}), prompt {:.1}",
            self.tokens.mean_context_tokens, self.tokens.max_context_tokens, self.tokens.mean_prompt_tokens
        );
        let l = &self.latency;
        let _ = writeln!(
            out,
            "latency (us): ingest {} consolidate {} plan {:.0} anchors {:.0} traverse {:.0} linearize {:.0} answer {:.0} judge {:.0}",
            l.ingest_us, l.consolidate_us, l.mean_plan_us, l.mean_anchors_us, l.mean_traverse_us, l.mean_linearize_us, l.mean_answer_us, l.mean_judge_us
        );
        out
    }
}

/// Rejects configs that cannot produce a faithful run, before anything is
/// ingested.
pub fn check_config(config: &EngineConfig) -> Result<(), EvalError> {
    for (role, p) in config.providers() {
        if p.kind == ProviderKind::Disabled {
            return Err(EvalError::MissingProvider { role });
        }
        if role != "embedder" && p.temperature != 0.0 {
            return Err(EvalError::Temperature { role, temperature: p.temperature });
        }
    }
    Ok(())
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

struct ConversationRun {
    build: BuildSummary,
    records: Vec<SampleRecord>,
    ingest_us: u64,
    consolidate_us: u64,
}

/// Answers one question. Only the question text and the gold answer are
/// read here; the category is attached afterwards for aggregation.
fn answer_one(engine: &Engine, sample: &QASample, cfg: &RetrievalConfig) -> Result<SampleRecord, EngineError> {
    let mut record = SampleRecord {
        conversation: sample.conversation.clone(),
        question: sample.question.clone(),
        category: Category::SingleHop,
        gold: sample.gold.clone(),
        answer: String::new(),
        intent: String::new(),
        judge: None,
        judge_reasoning: String::new(),
        f1: 0.0,
        bleu1: 0.0,
        context_tokens: 0,
        prompt_tokens: 0,
        fallback: false,
        visited: 0,
        edge_types: BTreeMap::new(),
        written_back: 0,
        error: None,
        timings: RecordTimings::default(),
    };
    let started = Instant::now();
    let outcome = match engine.query_with(&sample.question, sample.now, cfg, true) {
        Ok(o) => o,
        Err(e @ EngineError::Query(_)) => {
            record.error = Some(e.to_string());
            return Ok(record);
        }
        Err(e) => return Err(e),
    };
    let r = &outcome.retrieval;
    let d = &r.diagnostics;
    record.intent = r.plan.intent.as_str().to_string();
    record.context_tokens = r.context.token_count;
    let request = answer_request(&engine.config().answerer, &sample.question, &r.context, r.plan.intent);
    record.prompt_tokens = request.messages.iter().map(|m| estimate_tokens(&m.content)).sum();
    record.fallback = d.fallback;
    record.visited = d.visited;
    record.edge_types = d.edge_types.clone();
    record.written_back = outcome.written_back.len();
    let t = &d.timings;
    let stages = t.plan_us + t.anchors_us + t.traverse_us + t.linearize_us;
    record.timings = RecordTimings {
        plan_us: t.plan_us,
        anchors_us: t.anchors_us,
        traverse_us: t.traverse_us,
        linearize_us: t.linearize_us,
        answer_us: micros(started).saturating_sub(stages),
        judge_us: 0,
    };
    let Some(answer) = outcome.answer else {
        record.error = outcome.answer_error.or_else(|| Some("no answer produced".into()));
        return Ok(record);
    };
    record.f1 = token_f1(&sample.gold, &answer);
    record.bleu1 = bleu1(&sample.gold, &answer);
    let judged = Instant::now();
    match engine.judge(&sample.question, &sample.gold, &answer) {
        Ok(j) => {
            record.judge = Some(j.score);
            record.judge_reasoning = j.reasoning;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record.timings.judge_us = micros(judged);
    record.answer = answer;
    Ok(record)
}

fn run_conversation(conv: &Conversation, config: &EngineConfig, providers: &Providers, cfg: &RetrievalConfig) -> Result<ConversationRun, EvalError> {
    let wrap = |source: EngineError| EvalError::Engine { conversation: conv.id.clone(), source };
    let engine = Engine::ephemeral(config.clone(), providers.clone()).map_err(wrap)?;
    let started = Instant::now();
    for turn in &conv.turns {
        engine.ingest(turn).map_err(wrap)?;
    }
    let ingest_us = micros(started);
    let started = Instant::now();
    let drained = engine.consolidate(None).map_err(wrap)?;
    let consolidate_us = micros(started);
    let stats = engine.stats();
    let build = BuildSummary {
        conversation: conv.id.clone(),
        turns: conv.turns.len(),
        events: stats.events,
        entities: stats.entities,
        edges: stats.edges,
        consolidated: stats.consolidated,
        consolidation_failures: drained.abandoned,
        audit_violations: engine.audit().len(),
    };
    let mut records = Vec::with_capacity(conv.questions.len());
    for sample in &conv.questions {
        records.push(answer_one(&engine, sample, cfg).map_err(wrap)?);
    }
    Ok(ConversationRun { build, records, ingest_us, consolidate_us })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 { 0.0 } else { sum / n as f64 }
}

pub fn run_eval(dataset: &Dataset, config: &EngineConfig, options: &EvalOptions) -> Result<RunReport, EvalError> {
    check_config(config)?;
    config.validate().map_err(EngineError::from)?;
    let providers = Providers::from_config(config).map_err(EngineError::from)?;
    let mut retrieval = config.retrieval();
    if let Some(a) = options.ablation {
        a.apply(&mut retrieval);
    }

    let runs: Vec<Result<ConversationRun, EvalError>> = if options.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = dataset
                .conversations
                .iter()
                .map(|c| {
                    let (providers, retrieval) = (&providers, &retrieval);
                    scope.spawn(move || run_conversation(c, config, providers, retrieval))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
        })
    } else {
        dataset.conversations.iter().map(|c| run_conversation(c, config, &providers, &retrieval)).collect()
    };

    let mut builds = Vec::new();
    let mut records = Vec::new();
    let mut latency = Latency::default();
    for (conv, run) in dataset.conversations.iter().zip(runs) {
        let mut run = run?;
        // Labels are attached only now, after every answer has been produced.
        for (record, sample) in run.records.iter_mut().zip(&conv.questions) {
            record.category = sample.category();
        }
        latency.ingest_us += run.ingest_us;
        latency.consolidate_us += run.consolidate_us;
        builds.push(run.build);
        records.extend(run.records);
    }

    let mut categories = BTreeMap::new();
    for c in Category::ALL {
        let a = Aggregate::of(records.iter().filter(|r| r.category == c));
        if a.count > 0 {
            categories.insert(c, a);
        }
    }
    let t = |f: fn(&RecordTimings) -> u64| mean(records.iter().map(|r| f(&r.timings) as f64));
    latency.mean_plan_us = t(|x| x.plan_us);
    latency.mean_anchors_us = t(|x| x.anchors_us);
    latency.mean_traverse_us = t(|x| x.traverse_us);
    latency.mean_linearize_us = t(|x| x.linearize_us);
    latency.mean_answer_us = t(|x| x.answer_us);
    latency.mean_judge_us = t(|x| x.judge_us);
    let tokens = TokenUsage {
        mean_context_tokens: mean(records.iter().map(|r| r.context_tokens as f64)),
        max_context_tokens: records.iter().map(|r| r.context_tokens).max().unwrap_or(0),
        mean_prompt_tokens: mean(records.iter().map(|r| r.prompt_tokens as f64)),
    };
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64);

    let mut report = RunReport {
        engine_version: VERSION.to_string(),
        dataset: dataset.name.clone(),
        variant: options.ablation.map_or("full", Ablation::label).to_string(),
        variant_note: options.ablation.map_or("", Ablation::note).to_string(),
        loop_write_back: config.loop_write_back,
        config_hash: config.hash(),
        config: config.clone(),
        generated_at: Timestamp(now).to_iso(),
        overall: Aggregate::of(&records),
        categories,
        tokens,
        latency,
        builds,
        records,
        report_hash: String::new(),
    };
    report.report_hash = report.compute_hash();
    Ok(report)
}
