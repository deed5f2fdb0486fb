//! Uniform access to external text-intelligence services: the attribute
//! extractor, the consolidation reasoner, the answer synthesizer, the judge
//! and the embedding encoder. Every role can be backed by an HTTP endpoint
//! or by a deterministic rule-table mock that goes through the same
//! prompt-rendering and response-parsing path.

mod embed;
mod http;
mod mock;
pub mod prompts;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{AttributeSet, IntentLabel};
use crate::query::LinearizedContext;

pub use embed::{fnv1a64, HashEmbedder, HttpEmbedder};
pub use http::HttpChat;
pub use mock::{MockChat, MockRules};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("{role} provider is not configured")]
    NotConfigured { role: ProviderRole },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid mock rules: {0}")]
    MockRules(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderRole {
    Extractor,
    Reasoner,
    Answerer,
    Judge,
    Embedder,
}

impl std::fmt::Display for ProviderRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProviderRole::Extractor => "extractor",
            ProviderRole::Reasoner => "reasoner",
            ProviderRole::Answerer => "answerer",
            ProviderRole::Judge => "judge",
            ProviderRole::Embedder => "embedder",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Environment variable holding the API credential.
    pub api_key_env: String,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            endpoint: String::new(),
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            timeout_secs: 60,
            max_retries: 1,
            api_key_env: "STRATA_API_KEY".into(),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(cfg: &ProviderConfig, system: String, user: String) -> Self {
        ChatRequest {
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            messages: vec![ChatMessage { role: "system".into(), content: system }, ChatMessage { role: "user".into(), content: user }],
        }
    }

    pub fn system(&self) -> &str {
        self.messages.iter().find(|m| m.role == "system").map_or("", |m| m.content.as_str())
    }

    /// Concatenated user turns, in order.
    pub fn user(&self) -> String {
        self.messages.iter().filter(|m| m.role == "user").map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// A chat-style completion service. Returns the first text content of the
/// response.
pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    /// One vector per input text, in order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

/// Wraps a provider and counts calls through it.
pub struct Counting<P: ?Sized> {
    inner: Arc<P>,
    calls: Arc<AtomicUsize>,
}

impl<P: ?Sized> Counting<P> {
    pub fn new(inner: Arc<P>) -> Self {
        Counting { inner, calls: Arc::new(AtomicUsize::new(0)) }
    }

    pub fn counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.calls)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Counting<P> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.chat(request)
    }
}

impl<P: Embedder + ?Sized> Embedder for Counting<P> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(texts)
    }
}

/// Returns the JSON object embedded in a model response, tolerating
/// markdown fences and leading or trailing prose.
pub fn extract_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

pub fn parse_json_object(raw: &str) -> Result<serde_json::Map<String, Value>, ProviderError> {
    let body = extract_json_object(raw).ok_or_else(|| ProviderError::Malformed(format!("no JSON object in {:?}", truncate(raw, 80))))?;
    match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ProviderError::Malformed("response is not a JSON object".into())),
        Err(e) => Err(ProviderError::Malformed(e.to_string())),
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// Same shape as [`AttributeSet`]; `speaker` may be absent from the
/// extractor response and is then taken from the interaction.
pub type ExtractionResult = AttributeSet;

fn string_list(map: &serde_json::Map<String, Value>, key: &str) -> Result<Vec<String>, ProviderError> {
    match map.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| ProviderError::Schema(format!("\"{key}\" must contain only strings"))))
            .collect(),
        Some(_) => Err(ProviderError::Schema(format!("\"{key}\" must be a list of strings"))),
        None => Err(ProviderError::Schema(format!("missing field \"{key}\""))),
    }
}

fn string_field(map: &serde_json::Map<String, Value>, key: &str) -> Result<String, ProviderError> {
    match map.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ProviderError::Schema(format!("\"{key}\" must be a string"))),
        None => Err(ProviderError::Schema(format!("missing field \"{key}\""))),
    }
}

/// Validates an extractor response against the attribute schema.
pub fn parse_extraction(raw: &str, speaker: &str) -> Result<ExtractionResult, ProviderError> {
    let map = parse_json_object(raw)?;
    let speaker = match map.get("speaker") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::String(_)) | None => speaker.to_string(),
        Some(_) => return Err(ProviderError::Schema("\"speaker\" must be a string".into())),
    };
    Ok(AttributeSet {
        entities: string_list(&map, "entities")?,
        topic: string_field(&map, "topic")?,
        relationships: string_list(&map, "relationships")?,
        semantic_facts: string_list(&map, "semantic_facts")?,
        dates_mentioned: string_list(&map, "dates_mentioned")?,
        summary: string_field(&map, "summary")?,
        speaker,
    })
}

/// Sends `request`, parsing with `parse`; on a malformed or schema-invalid
/// response re-sends with a JSON reminder appended, up to `repairs` times.
pub fn chat_json<T>(
    provider: &dyn ChatProvider,
    mut request: ChatRequest,
    repairs: u32,
    parse: impl Fn(&str) -> Result<T, ProviderError>,
) -> Result<T, ProviderError> {
    let mut last = String::new();
    for attempt in 0..=repairs {
        if attempt > 0 {
            request.messages.push(ChatMessage { role: "user".into(), content: prompts::JSON_REMINDER.into() });
        }
        let raw = provider.chat(&request)?;
        match parse(&raw) {
            Ok(v) => return Ok(v),
            Err(e @ (ProviderError::Malformed(_) | ProviderError::Schema(_))) => last = e.to_string(),
            Err(e) => return Err(e),
        }
    }
    Err(ProviderError::Exhausted { attempts: repairs + 1, last })
}

pub fn extraction_request(cfg: &ProviderConfig, speaker: &str, text: &str, prev_summary: &str) -> ChatRequest {
    let user = prompts::fill(prompts::EXTRACTOR_USER, &[("speaker", speaker), ("text", text), ("prev_summary", prev_summary)]);
    ChatRequest::new(cfg, prompts::EXTRACTOR_SYSTEM.to_string(), user)
}

pub fn extract_attributes(
    provider: &dyn ChatProvider,
    cfg: &ProviderConfig,
    speaker: &str,
    text: &str,
    prev_summary: &str,
) -> Result<ExtractionResult, ProviderError> {
    let request = extraction_request(cfg, speaker, text, prev_summary);
    chat_json(provider, request, cfg.max_retries.max(1), |raw| parse_extraction(raw, speaker))
}

pub fn answer_request(cfg: &ProviderConfig, question: &str, context: &LinearizedContext, intent: IntentLabel) -> ChatRequest {
    let constraints = format!("{} question (router intent {intent})", prompts::qa_category(intent));
    let user = prompts::fill(
        prompts::QA_USER,
        &[
            ("context", context.rendered.as_str()),
            ("question", question),
            ("category_specific_constraints", constraints.as_str()),
            ("dynamic_instruction", prompts::dynamic_instruction(intent)),
        ],
    );
    ChatRequest::new(cfg, prompts::QA_SYSTEM.to_string(), user)
}

/// Answers `question` from the linearized context. The intent comes from
/// the query router, never from dataset labels.
pub fn synthesize_answer(
    provider: &dyn ChatProvider,
    cfg: &ProviderConfig,
    question: &str,
    context: &LinearizedContext,
    intent: IntentLabel,
) -> Result<String, ProviderError> {
    if context.blocks.is_empty() || context.rendered.trim().is_empty() {
        return Err(ProviderError::Precondition("answer synthesis needs a non-empty context".into()));
    }
    let raw = provider.chat(&answer_request(cfg, question, context, intent))?;
    Ok(raw.trim().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    pub score: f64,
    pub reasoning: String,
}

pub fn judge_request(cfg: &ProviderConfig, question: &str, gold: &str, candidate: &str) -> ChatRequest {
    let user = prompts::fill(prompts::JUDGE_USER, &[("question", question), ("gold", gold), ("generated", candidate)]);
    ChatRequest::new(cfg, prompts::JUDGE_SYSTEM.to_string(), user)
}

pub fn parse_judgement(raw: &str) -> Result<Judgement, ProviderError> {
    let map = parse_json_object(raw)?;
    let score = map
        .get("score")
        .and_then(Value::as_f64)
        .ok_or_else(|| ProviderError::Schema("\"score\" must be a number".into()))?;
    let reasoning = map.get("reasoning").and_then(Value::as_str).unwrap_or_default().to_string();
    Ok(Judgement { score: score.clamp(0.0, 1.0), reasoning })
}

/// Scores `candidate` against `gold`. Unparseable output is retried once and
/// then reported as a failure, never as a made-up score.
pub fn judge(provider: &dyn ChatProvider, cfg: &ProviderConfig, question: &str, gold: &str, candidate: &str) -> Result<Judgement, ProviderError> {
    chat_json(provider, judge_request(cfg, question, gold, candidate), 1, parse_judgement)
}
