//! Serialization of a retrieved subgraph into an ordered, reference-tagged
//! context string under a token budget.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::QueryError;
use crate::graph::MemoryGraph;
use crate::model::{EdgeType, IntentLabel, NodeId, Timestamp, TypedEdge};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: NodeId,
    pub timestamp: Timestamp,
    /// The fully rendered line, kept even when the block is elided.
    pub text: String,
    pub salience: f64,
    pub elided: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearizedContext {
    pub blocks: Vec<Block>,
    pub rendered: String,
    pub token_count: usize,
    /// Ids of the blocks that survived budgeting, in context order.
    pub references: Vec<NodeId>,
}

/// Provider-agnostic estimate: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// `<t:ISO> content <ref:id>`; line breaks inside content become spaces so
/// one block is always one line.
pub fn render_block(id: NodeId, timestamp: Timestamp, content: &str) -> String {
    let flat: String = content.chars().map(|c| if c == '\n' || c == '\r' { ' ' } else { c }).collect();
    format!("<t:{}> {} <ref:{}>", timestamp.to_iso(), flat, id)
}

pub fn brevity_code(n: usize) -> String {
    format!("...{n} intermediate events...")
}

fn render(blocks: &[Block]) -> String {
    let mut lines: Vec<String> = Vec::with_capacity(blocks.len());
    let mut run = 0usize;
    for b in blocks {
        if b.elided {
            run += 1;
            continue;
        }
        if run > 0 {
            lines.push(brevity_code(run));
            run = 0;
        }
        lines.push(b.text.clone());
    }
    if run > 0 {
        lines.push(brevity_code(run));
    }
    lines.join("\n")
}

/// Context order. WHY uses a topological order of the CAUSAL edges with
/// (timestamp, id) breaking ties; every other intent is chronological.
pub fn order_nodes(graph: &MemoryGraph, ids: &BTreeSet<NodeId>, edges: &[TypedEdge], intent: IntentLabel) -> Vec<NodeId> {
    let mut keyed: Vec<(Timestamp, NodeId)> = ids.iter().map(|&id| graph.order_key(id)).collect();
    keyed.sort();
    if intent != IntentLabel::Why {
        return keyed.into_iter().map(|(_, id)| id).collect();
    }
    let mut indegree: HashMap<NodeId, usize> = ids.iter().map(|&id| (id, 0)).collect();
    let mut succ: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    let causal: BTreeSet<(NodeId, NodeId)> = edges
        .iter()
        .filter(|e| e.edge_type == EdgeType::Causal && ids.contains(&e.src) && ids.contains(&e.dst) && e.src != e.dst)
        .map(|e| (e.src, e.dst))
        .collect();
    for &(s, d) in &causal {
        succ.entry(s).or_default().push(d);
        *indegree.get_mut(&d).unwrap() += 1;
    }
    let mut ready: BTreeSet<(Timestamp, NodeId)> = keyed.iter().copied().filter(|(_, id)| indegree[id] == 0).collect();
    let mut out = Vec::with_capacity(ids.len());
    while let Some(first) = ready.pop_first() {
        out.push(first.1);
        for &d in succ.get(&first.1).into_iter().flatten() {
            let deg = indegree.get_mut(&d).unwrap();
            *deg -= 1;
            if *deg == 0 {
                ready.insert(graph.order_key(d));
            }
        }
    }
    // A cycle cannot arise from timestamp-oriented edges; if one does, the
    // remaining nodes are appended chronologically.
    if out.len() < ids.len() {
        let placed: BTreeSet<NodeId> = out.iter().copied().collect();
        out.extend(keyed.into_iter().map(|(_, id)| id).filter(|id| !placed.contains(id)));
    }
    out
}

/// Applies the token budget to blocks already in context order. Blocks are
/// elided one at a time in ascending salience (later blocks first on ties)
/// until the rendering fits; the most salient block is never elided.
pub fn fit_to_budget(mut blocks: Vec<Block>, token_budget: usize) -> Result<LinearizedContext, QueryError> {
    if blocks.is_empty() {
        return Err(QueryError::EmptySubgraph);
    }
    let top = blocks
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.salience.total_cmp(&b.1.salience).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let mut victims: Vec<usize> = (0..blocks.len()).filter(|&i| i != top).collect();
    victims.sort_by(|&a, &b| blocks[a].salience.total_cmp(&blocks[b].salience).then(b.cmp(&a)));
    let mut victims = victims.into_iter();
    loop {
        let rendered = render(&blocks);
        let tokens = estimate_tokens(&rendered);
        if tokens <= token_budget {
            let references = blocks.iter().filter(|b| !b.elided).map(|b| b.id).collect();
            return Ok(LinearizedContext { blocks, rendered, token_count: tokens, references });
        }
        match victims.next() {
            Some(i) => blocks[i].elided = true,
            None => return Err(QueryError::BudgetInfeasible { budget: token_budget, needed: tokens }),
        }
    }
}

pub fn linearize(
    graph: &MemoryGraph,
    scores: &BTreeMap<NodeId, f64>,
    edges: &[TypedEdge],
    intent: IntentLabel,
    token_budget: usize,
) -> Result<LinearizedContext, QueryError> {
    let ids: BTreeSet<NodeId> = scores.keys().copied().collect();
    let mut blocks = Vec::with_capacity(ids.len());
    for id in order_nodes(graph, &ids, edges, intent) {
        let node = graph.node(id).ok_or(QueryError::UnknownAnchor(id))?;
        blocks.push(Block {
            id,
            timestamp: node.timestamp,
            text: render_block(id, node.timestamp, &node.content),
            salience: scores[&id],
            elided: false,
        });
    }
    fit_to_budget(blocks, token_budget)
}
