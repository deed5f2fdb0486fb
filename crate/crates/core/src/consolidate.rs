//! Slow path: fill attributes through the extractor, link entities, add
//! semantic edges by cosine threshold and admit provider-inferred causal
//! edges oriented from earlier to later events.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, MemoryGraph};
use crate::index::{cosine, IndexSet};
use crate::model::{AttributeSet, EdgeOrigin, EdgeType, NodeId, Timestamp, TypedEdge};
use crate::provider::{
    chat_json, extract_attributes, parse_json_object, prompts, ChatProvider, ChatRequest, ProviderConfig, ProviderError,
};
use crate::query::render_block;
use crate::queue::{ConsolidationQueue, FailureOutcome, QueueError};

#[derive(Debug, Error)]
pub enum ConsolidateError {
    #[error("node {0} is not an event in the store")]
    UnknownNode(NodeId),
    #[error("provider failed for node {node}: {source}")]
    Provider { node: NodeId, source: ProviderError },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationConfig {
    pub theta_sim: f64,
    pub delta_causal: f64,
    pub hops: usize,
    pub semantic_top_m: usize,
    /// Most events shown to the reasoner, nearest first.
    pub neighborhood_cap: usize,
    /// Most episode-mate summaries passed as history.
    pub history_cap: usize,
}

impl Default for ConsolidationConfig {
    fn default() -> Self {
        ConsolidationConfig { theta_sim: 0.20, delta_causal: 0.5, hops: 2, semantic_top_m: 5, neighborhood_cap: 24, history_cap: 10 }
    }
}

impl ConsolidationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.theta_sim) || !(0.0..=1.0).contains(&self.delta_causal) {
            return Err("theta_sim and delta_causal must lie in [0, 1]".into());
        }
        if self.hops == 0 {
            return Err("hops must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationReport {
    pub node: NodeId,
    /// The node had already been consolidated; nothing was done.
    pub skipped: bool,
    pub attributes_set: bool,
    pub edges_added: BTreeMap<String, usize>,
    pub provider_calls: usize,
}

impl ConsolidationReport {
    pub fn added(&self, t: EdgeType) -> usize {
        self.edges_added.get(t.as_str()).copied().unwrap_or(0)
    }
}

/// Wraps a provider to count the requests made through it.
struct Tally<'a> {
    inner: &'a dyn ChatProvider,
    calls: AtomicUsize,
}

impl ChatProvider for Tally<'_> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.chat(request)
    }
}

/// Extractor and reasoner with their request settings.
#[derive(Clone, Copy)]
pub struct SlowPathProviders<'a> {
    pub extractor: &'a dyn ChatProvider,
    pub extractor_cfg: &'a ProviderConfig,
    pub reasoner: &'a dyn ChatProvider,
    pub reasoner_cfg: &'a ProviderConfig,
}

/// Inputs for the extractor call, read from the store.
#[derive(Debug, Clone)]
pub struct ExtractionJob {
    pub node: NodeId,
    pub speaker: String,
    pub text: String,
    pub prev_summary: String,
}

pub fn extraction_job(graph: &MemoryGraph, id: NodeId) -> Result<Option<ExtractionJob>, ConsolidateError> {
    let node = graph.node(id).ok_or(ConsolidateError::UnknownNode(id))?;
    if node.consolidated {
        return Ok(None);
    }
    let prev = graph
        .incident(id, &[EdgeType::Temporal])
        .find(|e| e.dst == id)
        .and_then(|e| graph.node(e.src))
        .map(|n| n.attributes.summary.clone())
        .unwrap_or_default();
    Ok(Some(ExtractionJob { node: id, speaker: node.attributes.speaker.clone(), text: node.content.clone(), prev_summary: prev }))
}

pub fn run_extraction(job: &ExtractionJob, p: &SlowPathProviders<'_>) -> Result<(AttributeSet, usize), ConsolidateError> {
    let tally = Tally { inner: p.extractor, calls: AtomicUsize::new(0) };
    let mut attrs = extract_attributes(&tally, p.extractor_cfg, &job.speaker, &job.text, &job.prev_summary)
        .map_err(|source| ConsolidateError::Provider { node: job.node, source })?;
    // Speaker is ingestion metadata; the extractor may omit or restate it.
    if !job.speaker.is_empty() {
        attrs.speaker = job.speaker.clone();
    }
    Ok((attrs, tally.calls.into_inner()))
}

fn bump(report: &mut ConsolidationReport, t: EdgeType, added: bool) {
    if added {
        *report.edges_added.entry(t.as_str().to_string()).or_insert(0) += 1;
    }
}

/// Stores attributes, entity links and semantic edges for `id`.
pub fn apply_extraction(
    graph: &mut MemoryGraph,
    indexes: &mut IndexSet,
    cfg: &ConsolidationConfig,
    id: NodeId,
    attributes: AttributeSet,
    report: &mut ConsolidationReport,
) -> Result<(), ConsolidateError> {
    let node = graph.node(id).ok_or(ConsolidateError::UnknownNode(id))?;
    let created_at = node.timestamp;
    let embedding = node.embedding.clone();
    let own_key = graph.order_key(id);

    let entities = attributes.entities.clone();
    graph.set_attributes(id, attributes)?;
    report.attributes_set = true;
    let node = graph.node(id).expect("exists");
    indexes.keywords.upsert(id, std::iter::once(node.content.as_str()).chain(node.attributes.text_fields()));

    for surface in &entities {
        // Mentions that normalize to nothing are skipped, not fatal.
        let Ok(entity) = graph.upsert_entity(surface) else { continue };
        let added = graph.add_edge(TypedEdge::new(id, entity, EdgeType::Entity, 1.0, EdgeOrigin::Consolidation, created_at))?;
        bump(report, EdgeType::Entity, added);
    }

    let mut similar: Vec<(NodeId, f64)> = graph
        .nodes()
        .filter(|n| n.id != id && graph.order_key(n.id) < own_key)
        .map(|n| (n.id, cosine(&n.embedding, &embedding)))
        .filter(|&(_, c)| c > cfg.theta_sim && c >= graph.settings().theta_sim)
        .collect();
    similar.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    similar.truncate(cfg.semantic_top_m);
    for (other, c) in similar {
        let edge = TypedEdge::new(other, id, EdgeType::Semantic, c.min(1.0), EdgeOrigin::Consolidation, created_at);
        bump(report, EdgeType::Semantic, graph.add_edge(edge)?);
    }
    Ok(())
}

/// Events within `hops` of `id` (entity hops collapsed), nearest first, then
/// closest in time.
pub fn local_events(graph: &MemoryGraph, id: NodeId, hops: usize, cap: usize) -> Vec<NodeId> {
    let mut dist: BTreeMap<NodeId, usize> = BTreeMap::from([(id, 0)]);
    let mut queue = VecDeque::from([id]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        if d == hops {
            continue;
        }
        for hop in graph.event_neighbors(u, &EdgeType::ALL) {
            if let std::collections::btree_map::Entry::Vacant(slot) = dist.entry(hop.neighbor) {
                slot.insert(d + 1);
                queue.push_back(hop.neighbor);
            }
        }
    }
    let center = graph.node(id).map(|n| n.timestamp).unwrap_or(Timestamp(0));
    let mut found: Vec<(usize, i64, NodeId)> = dist
        .into_iter()
        .filter(|&(n, _)| n != id)
        .map(|(n, d)| (d, (graph.order_key(n).0 .0 - center.0).abs(), n))
        .collect();
    found.sort();
    found.truncate(cap);
    found.into_iter().map(|(_, _, n)| n).collect()
}

/// The reasoner request for `id`, or `None` when it has no neighbours.
pub fn causal_request(graph: &MemoryGraph, cfg: &ConsolidationConfig, reasoner_cfg: &ProviderConfig, id: NodeId) -> Option<(ChatRequest, BTreeSet<NodeId>)> {
    let node = graph.node(id)?;
    let mut neighbours = local_events(graph, id, cfg.hops, cfg.neighborhood_cap);
    if neighbours.is_empty() {
        return None;
    }
    neighbours.sort_by_key(|&n| graph.order_key(n));
    let lines: Vec<String> = neighbours
        .iter()
        .filter_map(|&n| graph.node(n))
        .map(|n| render_block(n.id, n.timestamp, &n.content))
        .collect();
    let mut mates: Vec<(Timestamp, NodeId, &str)> = match &node.episode_id {
        Some(ep) => graph
            .nodes()
            .filter(|n| n.id != id && n.episode_id.as_ref() == Some(ep) && !n.attributes.summary.is_empty())
            .map(|n| (n.timestamp, n.id, n.attributes.summary.as_str()))
            .collect(),
        None => Vec::new(),
    };
    mates.sort();
    let skip = mates.len().saturating_sub(cfg.history_cap);
    let history: Vec<String> = mates.into_iter().skip(skip).map(|(_, _, s)| format!("- {s}")).collect();
    let history = if history.is_empty() { "(none)".to_string() } else { history.join("\n") };
    let user = prompts::fill(
        prompts::CONSOLIDATION_USER,
        &[
            ("target", &render_block(id, node.timestamp, &node.content)),
            ("neighborhood", &lines.join("\n")),
            ("history", &history),
        ],
    );
    let mut allowed: BTreeSet<NodeId> = neighbours.into_iter().collect();
    allowed.insert(id);
    Some((ChatRequest::new(reasoner_cfg, prompts::CONSOLIDATION_SYSTEM.to_string(), user), allowed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CausalPair {
    pub src: NodeId,
    pub dst: NodeId,
    pub confidence: f64,
}

pub fn parse_causal_pairs(raw: &str) -> Result<Vec<CausalPair>, ProviderError> {
    let map = parse_json_object(raw)?;
    let pairs = map
        .get("causal_pairs")
        .and_then(|v| v.as_array())
        .ok_or_else(|| ProviderError::Schema("\"causal_pairs\" must be an array".into()))?;
    pairs
        .iter()
        .map(|p| {
            let id = |k: &str| {
                p.get(k)
                    .and_then(|v| v.as_u64().or_else(|| v.as_str().and_then(|s| s.trim().parse().ok())))
                    .map(NodeId)
                    .ok_or_else(|| ProviderError::Schema(format!("causal pair field \"{k}\" must be a node id")))
            };
            let confidence = p
                .get("confidence")
                .and_then(|v| v.as_f64())
                .ok_or_else(|| ProviderError::Schema("causal pair needs a numeric confidence".into()))?;
            Ok(CausalPair { src: id("src")?, dst: id("dst")?, confidence })
        })
        .collect()
}

pub fn run_reasoner(
    request: ChatRequest,
    node: NodeId,
    p: &SlowPathProviders<'_>,
) -> Result<(Vec<CausalPair>, usize), ConsolidateError> {
    let tally = Tally { inner: p.reasoner, calls: AtomicUsize::new(0) };
    let pairs = chat_json(&tally, request, p.reasoner_cfg.max_retries.max(1), parse_causal_pairs)
        .map_err(|source| ConsolidateError::Provider { node, source })?;
    Ok((pairs, tally.calls.into_inner()))
}

/// Admits pairs at or above `delta_causal` between events of the prompt,
/// oriented from the earlier to the later event.
pub fn apply_causal(
    graph: &mut MemoryGraph,
    cfg: &ConsolidationConfig,
    id: NodeId,
    allowed: &BTreeSet<NodeId>,
    pairs: &[CausalPair],
    report: &mut ConsolidationReport,
) -> Result<(), ConsolidateError> {
    let created_at = graph.node(id).ok_or(ConsolidateError::UnknownNode(id))?.timestamp;
    for pair in pairs {
        if pair.confidence.is_nan() || pair.confidence < cfg.delta_causal || pair.src == pair.dst {
            continue;
        }
        if !allowed.contains(&pair.src) || !allowed.contains(&pair.dst) || graph.node(pair.src).is_none() || graph.node(pair.dst).is_none() {
            continue;
        }
        let (a, b) = if graph.order_key(pair.src) <= graph.order_key(pair.dst) { (pair.src, pair.dst) } else { (pair.dst, pair.src) };
        let edge = TypedEdge::new(a, b, EdgeType::Causal, pair.confidence.min(1.0), EdgeOrigin::Consolidation, created_at);
        bump(report, EdgeType::Causal, graph.add_edge(edge)?);
    }
    Ok(())
}

/// Runs every slow-path step for one node against an exclusively held store.
/// Already consolidated nodes are skipped, which makes redelivery harmless.
pub fn consolidate_one(
    graph: &mut MemoryGraph,
    indexes: &mut IndexSet,
    providers: &SlowPathProviders<'_>,
    cfg: &ConsolidationConfig,
    id: NodeId,
) -> Result<ConsolidationReport, ConsolidateError> {
    let mut report = ConsolidationReport { node: id, ..Default::default() };
    let Some(job) = extraction_job(graph, id)? else {
        report.skipped = true;
        return Ok(report);
    };
    let (attrs, calls) = run_extraction(&job, providers)?;
    report.provider_calls += calls;
    apply_extraction(graph, indexes, cfg, id, attrs, &mut report)?;
    if let Some((request, allowed)) = causal_request(graph, cfg, providers.reasoner_cfg, id) {
        let (pairs, calls) = run_reasoner(request, id, providers)?;
        report.provider_calls += calls;
        apply_causal(graph, cfg, id, &allowed, &pairs, &mut report)?;
    }
    graph.mark_consolidated(id)?;
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerSummary {
    pub processed: usize,
    pub skipped: usize,
    pub requeued: usize,
    pub abandoned: usize,
    pub edges_added: BTreeMap<String, usize>,
    pub provider_calls: usize,
    pub errors: Vec<String>,
}

impl WorkerSummary {
    pub fn record(&mut self, report: &ConsolidationReport) {
        self.processed += 1;
        self.skipped += usize::from(report.skipped);
        self.provider_calls += report.provider_calls;
        for (k, v) in &report.edges_added {
            *self.edges_added.entry(k.clone()).or_insert(0) += v;
        }
    }

    pub fn record_failure(&mut self, err: &ConsolidateError, outcome: FailureOutcome) {
        match outcome {
            FailureOutcome::Requeued => self.requeued += 1,
            FailureOutcome::Abandoned => self.abandoned += 1,
        }
        self.errors.push(err.to_string());
    }
}

/// Drains the queue until it is empty or `max_items` items were taken.
/// Provider failures follow the queue's requeue-once policy; store errors stop
/// the worker with the item left unacknowledged for redelivery.
pub fn run_worker(
    graph: &mut MemoryGraph,
    indexes: &mut IndexSet,
    queue: &mut ConsolidationQueue,
    providers: &SlowPathProviders<'_>,
    cfg: &ConsolidationConfig,
    max_items: Option<usize>,
) -> Result<WorkerSummary, ConsolidateError> {
    let mut summary = WorkerSummary::default();
    let mut taken = 0usize;
    while max_items.is_none_or(|m| taken < m) {
        let Some(id) = queue.dequeue() else { break };
        taken += 1;
        if graph.node(id).is_none() {
            queue.ack(id)?;
            continue;
        }
        match consolidate_one(graph, indexes, providers, cfg, id) {
            Ok(report) => {
                queue.ack(id)?;
                summary.record(&report);
            }
            Err(err @ ConsolidateError::Provider { .. }) => {
                let outcome = queue.fail(id)?;
                summary.record_failure(&err, outcome);
            }
            Err(other) => return Err(other),
        }
    }
    Ok(summary)
}
