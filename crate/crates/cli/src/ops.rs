//! The verbs shared by the command line and the HTTP service. Both
//! surfaces parse their input, call one of these, and print or serialize
//! the result unchanged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use strata_core::consolidate::WorkerSummary;
use strata_core::engine::VERSION;
use strata_core::graph::Violation;
use strata_core::ingest::Interaction;
use strata_core::model::{NodeId, Timestamp};
use strata_core::query::{Diagnostics, TimeWindow};
use strata_core::{Engine, EngineError};

/// Wraps a response body with the engine version and config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub version: String,
    pub config_hash: String,
    #[serde(flatten)]
    pub body: T,
}

pub fn envelope<T>(engine: &Engine, body: T) -> Envelope<T> {
    Envelope { version: VERSION.to_string(), config_hash: engine.config_hash().to_string(), body }
}

/// Field name to problem description.
pub type FieldErrors = BTreeMap<String, String>;

fn string_field(obj: &serde_json::Map<String, Value>, key: &str, required: bool, errors: &mut FieldErrors) -> Option<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Some(s.clone()),
        None | Some(Value::Null) if !required => None,
        None | Some(Value::Null) => {
            errors.insert(key.into(), "required string".into());
            None
        }
        Some(_) => {
            errors.insert(key.into(), "must be a string".into());
            None
        }
    }
}

fn object(body: &Value) -> Result<&serde_json::Map<String, Value>, FieldErrors> {
    body.as_object().ok_or_else(|| FieldErrors::from([("body".into(), "expected a JSON object".into())]))
}

pub fn parse_now(text: Option<&str>) -> Result<Timestamp, String> {
    match text {
        Some(t) => Timestamp::parse(t).map_err(|e| e.to_string()),
        None => Ok(Timestamp(std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64))),
    }
}

/// `{speaker, text, timestamp, session?}`.
pub fn ingest_request(body: &Value) -> Result<Interaction, FieldErrors> {
    let obj = object(body)?;
    let mut errors = FieldErrors::new();
    let speaker = string_field(obj, "speaker", true, &mut errors);
    let text = string_field(obj, "text", true, &mut errors);
    let stamp = string_field(obj, "timestamp", true, &mut errors);
    let session = string_field(obj, "session", false, &mut errors).unwrap_or_default();
    if text.as_deref().is_some_and(|t| t.trim().is_empty()) {
        errors.insert("text".into(), "must not be blank".into());
    }
    let timestamp = stamp.as_deref().and_then(|s| match Timestamp::parse(s) {
        Ok(t) => Some(t),
        Err(e) => {
            errors.insert("timestamp".into(), e.to_string());
            None
        }
    });
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(Interaction {
        speaker: speaker.unwrap_or_default(),
        text: text.unwrap_or_default(),
        timestamp: timestamp.unwrap_or(Timestamp(0)),
        timestamp_text: stamp.unwrap_or_default(),
        session,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryInput {
    pub question: String,
    pub now: Timestamp,
    pub answer: bool,
}

/// `{question, now?, answer?}`; `answer` defaults to true.
pub fn query_request(body: &Value) -> Result<QueryInput, FieldErrors> {
    let obj = object(body)?;
    let mut errors = FieldErrors::new();
    let question = string_field(obj, "question", true, &mut errors);
    if question.as_deref().is_some_and(|q| q.trim().is_empty()) {
        errors.insert("question".into(), "must not be blank".into());
    }
    let now = string_field(obj, "now", false, &mut errors);
    let now = match parse_now(now.as_deref()) {
        Ok(t) => t,
        Err(e) => {
            errors.insert("now".into(), e);
            Timestamp(0)
        }
    };
    let answer = match obj.get("answer") {
        None | Some(Value::Null) => true,
        Some(Value::Bool(b)) => *b,
        Some(_) => {
            errors.insert("answer".into(), "must be a boolean".into());
            true
        }
    };
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(QueryInput { question: question.unwrap_or_default(), now, answer })
}

/// `{max_items?}`.
pub fn consolidate_request(body: &Value) -> Result<Option<usize>, FieldErrors> {
    let obj = object(body)?;
    match obj.get("max_items") {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|n| Some(n as usize))
            .ok_or_else(|| FieldErrors::from([("max_items".into(), "must be a non-negative integer".into())])),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutput {
    pub turns: usize,
    pub ids: Vec<NodeId>,
    pub events: usize,
    pub queue_len: usize,
}

pub fn ingest(engine: &Engine, turns: &[Interaction]) -> Result<IngestOutput, EngineError> {
    let mut ids = Vec::new();
    for t in turns {
        ids.extend(engine.ingest(t)?);
    }
    Ok(IngestOutput { turns: turns.len(), ids, events: engine.stats().events, queue_len: engine.queue_len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutput {
    pub question: String,
    pub now: String,
    pub intent: String,
    pub window: Option<WindowText>,
    pub context: String,
    pub token_count: usize,
    pub references: Vec<NodeId>,
    pub answer: Option<String>,
    pub answer_error: Option<String>,
    pub written_back: Vec<NodeId>,
    pub diagnostics: Diagnostics,
}

impl QueryOutput {
    /// True when an answer was asked for, an answerer exists, and it failed.
    pub fn provider_failed(&self) -> bool {
        self.answer_error.is_some()
    }
}

/// A resolved time window in ISO form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowText {
    pub start: String,
    pub end: String,
}

impl From<TimeWindow> for WindowText {
    fn from(w: TimeWindow) -> Self {
        WindowText { start: w.start.to_iso(), end: w.end.to_iso() }
    }
}

pub fn query(engine: &Engine, input: &QueryInput) -> Result<QueryOutput, EngineError> {
    let out = engine.query(&input.question, input.now, input.answer)?;
    let r = out.retrieval;
    Ok(QueryOutput {
        question: input.question.clone(),
        now: input.now.to_iso(),
        intent: r.plan.intent.as_str().to_string(),
        window: r.plan.window.map(WindowText::from),
        context: r.context.rendered,
        token_count: r.context.token_count,
        references: r.context.references,
        answer: out.answer,
        answer_error: out.answer_error,
        written_back: out.written_back,
        diagnostics: r.diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidateOutput {
    #[serde(flatten)]
    pub summary: WorkerSummary,
    pub queue_len: usize,
}

pub fn consolidate(engine: &Engine, max_items: Option<usize>) -> Result<ConsolidateOutput, EngineError> {
    let summary = engine.consolidate(max_items)?;
    Ok(ConsolidateOutput { summary, queue_len: engine.queue_len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutput {
    pub count: usize,
    pub violations: Vec<Violation>,
}

pub fn audit(engine: &Engine) -> AuditOutput {
    let violations = engine.audit();
    AuditOutput { count: violations.len(), violations }
}
