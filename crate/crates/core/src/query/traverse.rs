//! Intent-weighted beam search over the event graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::QueryError;
use crate::graph::MemoryGraph;
use crate::index::cosine;
use crate::model::{EdgeType, IntentLabel, NodeId, TypedEdge};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeights {
    pub temporal: f64,
    pub causal: f64,
    pub semantic: f64,
    pub entity: f64,
}

impl EdgeWeights {
    pub const fn uniform(w: f64) -> Self {
        EdgeWeights { temporal: w, causal: w, semantic: w, entity: w }
    }

    pub fn get(&self, t: EdgeType) -> f64 {
        match t {
            EdgeType::Temporal => self.temporal,
            EdgeType::Causal => self.causal,
            EdgeType::Semantic => self.semantic,
            EdgeType::Entity => self.entity,
        }
    }

    pub fn shifted(&self, c: f64) -> Self {
        EdgeWeights { temporal: self.temporal + c, causal: self.causal + c, semantic: self.semantic + c, entity: self.entity + c }
    }
}

/// Intent → edge-type weight table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub why: EdgeWeights,
    pub when: EdgeWeights,
    pub entity: EdgeWeights,
    pub general: EdgeWeights,
}

impl Default for WeightTable {
    fn default() -> Self {
        WeightTable {
            why: EdgeWeights { causal: 4.0, temporal: 1.0, semantic: 1.0, entity: 1.5 },
            when: EdgeWeights { temporal: 3.0, causal: 1.0, semantic: 1.0, entity: 1.0 },
            entity: EdgeWeights { entity: 4.0, semantic: 1.5, causal: 1.0, temporal: 0.5 },
            general: EdgeWeights::uniform(1.0),
        }
    }
}

impl WeightTable {
    /// Every intent weighs every edge type the same.
    pub fn uniform() -> Self {
        let w = EdgeWeights::uniform(1.0);
        WeightTable { why: w, when: w, entity: w, general: w }
    }

    pub fn for_intent(&self, intent: IntentLabel) -> &EdgeWeights {
        match intent {
            IntentLabel::Why => &self.why,
            IntentLabel::When => &self.when,
            IntentLabel::Entity => &self.entity,
            IntentLabel::General => &self.general,
        }
    }

    pub fn for_intent_mut(&mut self, intent: IntentLabel) -> &mut EdgeWeights {
        match intent {
            IntentLabel::Why => &mut self.why,
            IntentLabel::When => &mut self.when,
            IntentLabel::Entity => &mut self.entity,
            IntentLabel::General => &mut self.general,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalPolicy {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub beam_width: usize,
    pub max_depth: usize,
    pub budget: usize,
    pub drop_threshold: f64,
    pub weights: WeightTable,
    /// Edge types the traversal may not walk (ablations).
    #[serde(default)]
    pub excluded: Vec<EdgeType>,
}

impl Default for TraversalPolicy {
    fn default() -> Self {
        TraversalPolicy {
            lambda1: 1.0,
            lambda2: 0.5,
            gamma: 0.85,
            beam_width: 8,
            max_depth: 5,
            budget: 200,
            drop_threshold: 0.15,
            weights: WeightTable::default(),
            excluded: Vec::new(),
        }
    }
}

impl TraversalPolicy {
    pub fn validate(&self) -> Result<(), QueryError> {
        let bad = |m: &str| Err(QueryError::InvalidConfig(m.to_string()));
        if self.beam_width == 0 {
            return bad("beam_width must be at least 1");
        }
        if self.budget < self.beam_width {
            return bad("budget must be at least beam_width");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.drop_threshold) {
            return bad("drop_threshold must lie in [0, 1]");
        }
        if !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return bad("lambda coefficients must be finite");
        }
        Ok(())
    }

    pub fn allowed_types(&self) -> Vec<EdgeType> {
        EdgeType::ALL.into_iter().filter(|t| !self.excluded.contains(t)).collect()
    }

    /// `exp(λ1·w[intent][type] + λ2·cos)`.
    pub fn transition(&self, intent: IntentLabel, edge_type: EdgeType, similarity: f64) -> f64 {
        (self.lambda1 * self.weights.for_intent(intent).get(edge_type) + self.lambda2 * similarity).exp()
    }
}

/// One tree edge of the traversal: `to` was reached from `from` via `edge_type`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub from: NodeId,
    pub to: NodeId,
    pub edge_type: EdgeType,
    pub depth: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraversalResult {
    /// Salience of every visited node.
    pub scores: BTreeMap<NodeId, f64>,
    /// Visit order: anchors first, then each accepted beam.
    pub order: Vec<NodeId>,
    pub tree: Vec<Step>,
    pub depth_reached: usize,
}

impl TraversalResult {
    /// Every edge of a walkable type whose endpoints were both visited. ENTITY
    /// edges are kept when their entity links at least two visited events.
    pub fn induced_edges(&self, graph: &MemoryGraph, allowed: &[EdgeType]) -> Vec<TypedEdge> {
        let mut out: BTreeMap<_, TypedEdge> = BTreeMap::new();
        let event_types: Vec<EdgeType> = allowed.iter().copied().filter(|t| *t != EdgeType::Entity).collect();
        for &id in self.scores.keys() {
            for e in graph.incident(id, &event_types) {
                if self.scores.contains_key(&e.src) && self.scores.contains_key(&e.dst) {
                    out.insert(e.key(), e.clone());
                }
            }
        }
        if allowed.contains(&EdgeType::Entity) {
            let mut by_entity: BTreeMap<NodeId, Vec<&TypedEdge>> = BTreeMap::new();
            for &id in self.scores.keys() {
                for e in graph.incident(id, &[EdgeType::Entity]) {
                    by_entity.entry(e.dst).or_default().push(e);
                }
            }
            for edges in by_entity.into_values().filter(|v| v.len() >= 2) {
                for e in edges {
                    out.insert(e.key(), e.clone());
                }
            }
        }
        out.into_values().collect()
    }
}

/// Beam search from `anchors` (id, seed score). Each depth scores every
/// unvisited neighbour `v` of the frontier as `score(u)·γ + s_uv`, keeping the
/// best parent; candidates under `drop_threshold` times the step's best
/// candidate are discarded and the top `beam_width` become the next frontier.
pub fn traverse(
    graph: &MemoryGraph,
    anchors: &[(NodeId, f64)],
    query_embedding: &[f32],
    intent: IntentLabel,
    policy: &TraversalPolicy,
) -> Result<TraversalResult, QueryError> {
    policy.validate()?;
    if anchors.is_empty() {
        return Err(QueryError::NoAnchors);
    }
    let allowed = policy.allowed_types();
    let mut result = TraversalResult::default();
    let mut frontier = Vec::new();
    for &(id, score) in anchors {
        if graph.node(id).is_none() {
            return Err(QueryError::UnknownAnchor(id));
        }
        if result.scores.len() >= policy.budget {
            break;
        }
        if result.scores.insert(id, score).is_none() {
            result.order.push(id);
            frontier.push(id);
        }
    }

    for depth in 1..=policy.max_depth {
        if frontier.is_empty() || result.scores.len() >= policy.budget {
            break;
        }
        let mut candidates: BTreeMap<NodeId, (f64, NodeId, EdgeType)> = BTreeMap::new();
        for &u in &frontier {
            let base = result.scores[&u] * policy.gamma;
            for hop in graph.event_neighbors(u, &allowed) {
                let v = hop.neighbor;
                if result.scores.contains_key(&v) {
                    continue;
                }
                let Some(node) = graph.node(v) else { continue };
                let score = base + policy.transition(intent, hop.edge_type, cosine(&node.embedding, query_embedding));
                let better = candidates.get(&v).is_none_or(|(best, _, _)| score > *best);
                if better {
                    candidates.insert(v, (score, u, hop.edge_type));
                }
            }
        }
        let Some(max) = candidates.values().map(|c| c.0).max_by(f64::total_cmp) else { break };
        let cutoff = policy.drop_threshold * max;
        let mut ranked: Vec<(NodeId, (f64, NodeId, EdgeType))> =
            candidates.into_iter().filter(|(_, c)| c.0 >= cutoff).collect();
        ranked.sort_by(|a, b| b.1 .0.total_cmp(&a.1 .0).then(a.0.cmp(&b.0)));
        ranked.truncate(policy.beam_width.min(policy.budget - result.scores.len()));
        frontier.clear();
        for (v, (score, from, edge_type)) in ranked {
            result.scores.insert(v, score);
            result.order.push(v);
            result.tree.push(Step { from, to: v, edge_type, depth });
            frontier.push(v);
        }
        result.depth_reached = depth;
    }
    Ok(result)
}

/// Visited nodes in descending salience, ties by ascending id.
pub fn by_salience(scores: &BTreeMap<NodeId, f64>) -> Vec<(NodeId, f64)> {
    let mut v: Vec<(NodeId, f64)> = scores.iter().map(|(&id, &s)| (id, s)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}
