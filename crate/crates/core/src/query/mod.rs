//! Synchronous retrieval: query decomposition, anchor fusion, policy-guided
//! traversal and budgeted linearization.

mod anchors;
mod intent;
mod linearize;
mod timeparse;
mod traverse;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use anchors::{find_anchors, fuse_lists, rrf_fuse, signal_lists, AnchorConfig, Signal, SignalLists};
pub use intent::{classify_intent, classify_intent_with};
pub use linearize::{brevity_code, estimate_tokens, fit_to_budget, linearize, order_nodes, render_block, Block, LinearizedContext};
pub use timeparse::{parse_time, TimeWindow};
pub use traverse::{by_salience, traverse, EdgeWeights, Step, TraversalPolicy, TraversalResult, WeightTable};

use crate::graph::MemoryGraph;
use crate::index::{tokenize, IndexError, IndexSet};
use crate::model::{normalize_entity, IntentLabel, NodeId, Timestamp};
use crate::provider::{Embedder, ProviderError};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("no memory: the store holds no events")]
    NoMemory,
    #[error("traversal needs at least one anchor")]
    NoAnchors,
    #[error("anchor {0} is not an event in the store")]
    UnknownAnchor(NodeId),
    #[error("nothing to linearize")]
    EmptySubgraph,
    #[error("budget infeasible: {budget} tokens cannot hold the top block ({needed} needed)")]
    BudgetInfeasible { budget: usize, needed: usize },
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("query embedding failed: {0}")]
    Embed(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub raw: String,
    pub intent: IntentLabel,
    pub window: Option<TimeWindow>,
    pub embedding: Vec<f32>,
    pub keywords: Vec<String>,
}

/// Classifies, resolves dates against `now`, embeds and extracts keywords.
pub fn plan_query(
    query: &str,
    now: Timestamp,
    graph: &MemoryGraph,
    embedder: &dyn Embedder,
) -> Result<QueryPlan, QueryError> {
    let raw = query.trim();
    if raw.is_empty() {
        return Err(QueryError::EmptyQuery);
    }
    let intent = classify_intent_with(raw, |name| {
        normalize_entity(name).is_ok_and(|n| graph.entity_by_name(&n).is_some())
    });
    let window = parse_time(raw, now);
    let embedding = embedder.embed(&[raw.to_string()])?.pop().unwrap_or_default();
    if embedding.len() != embedder.dimension() {
        return Err(QueryError::Index(IndexError::DimensionMismatch { expected: embedder.dimension(), got: embedding.len() }));
    }
    let mut keywords = Vec::new();
    for k in tokenize(raw) {
        if !keywords.contains(&k) {
            keywords.push(k);
        }
    }
    Ok(QueryPlan { raw: raw.to_string(), intent, window, embedding, keywords })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub anchors: AnchorConfig,
    pub policy: TraversalPolicy,
    pub token_budget: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { anchors: AnchorConfig::default(), policy: TraversalPolicy::default(), token_budget: 4000 }
    }
}

/// Wall-clock time per stage in microseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub plan_us: u64,
    pub anchors_us: u64,
    pub traverse_us: u64,
    pub linearize_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub intent: IntentLabel,
    pub window: Option<TimeWindow>,
    pub anchors: Vec<(NodeId, f64)>,
    /// True when no signal matched and the most recent events seeded the search.
    pub fallback: bool,
    pub visited: usize,
    pub depth_reached: usize,
    /// Edge counts by type inside the retrieved subgraph.
    pub edge_types: BTreeMap<String, usize>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub context: LinearizedContext,
    pub plan: QueryPlan,
    pub diagnostics: Diagnostics,
}

fn micros(start: Instant) -> u64 {
    start.elapsed().as_micros() as u64
}

/// Seeds for an unmatched query: the newest events, scored like a
/// unit-weight recency list.
fn fallback_anchors(indexes: &IndexSet, cfg: &AnchorConfig) -> Vec<(NodeId, f64)> {
    let recent = indexes.times.most_recent(cfg.anchor_top_k);
    rrf_fuse(&[Signal { weight: 1.0, ranked: &recent }], cfg.rrf_k)
}

pub fn retrieve(
    graph: &MemoryGraph,
    indexes: &IndexSet,
    embedder: &dyn Embedder,
    query: &str,
    now: Timestamp,
    cfg: &RetrievalConfig,
) -> Result<Retrieval, QueryError> {
    cfg.anchors.validate()?;
    cfg.policy.validate()?;
    if graph.node_count() == 0 {
        return Err(QueryError::NoMemory);
    }
    let t = Instant::now();
    let plan = plan_query(query, now, graph, embedder)?;
    let plan_us = micros(t);

    let t = Instant::now();
    let mut anchors = find_anchors(&plan, indexes, &cfg.anchors)?;
    let fallback = anchors.is_empty();
    if fallback {
        anchors = fallback_anchors(indexes, &cfg.anchors);
    }
    let anchors_us = micros(t);

    let t = Instant::now();
    let walk = traverse(graph, &anchors, &plan.embedding, plan.intent, &cfg.policy)?;
    let edges = walk.induced_edges(graph, &cfg.policy.allowed_types());
    let traverse_us = micros(t);

    let t = Instant::now();
    let context = linearize(graph, &walk.scores, &edges, plan.intent, cfg.token_budget)?;
    let linearize_us = micros(t);

    let mut edge_types = BTreeMap::new();
    for e in &edges {
        *edge_types.entry(e.edge_type.as_str().to_string()).or_insert(0) += 1;
    }
    let diagnostics = Diagnostics {
        intent: plan.intent,
        window: plan.window,
        anchors,
        fallback,
        visited: walk.scores.len(),
        depth_reached: walk.depth_reached,
        edge_types,
        timings: StageTimings { plan_us, anchors_us, traverse_us, linearize_us },
    };
    Ok(Retrieval { context, plan, diagnostics })
}
