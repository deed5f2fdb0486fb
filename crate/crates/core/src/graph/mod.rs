//! The unified memory graph: event and entity nodes, four typed edge
//! spaces with forward and reverse adjacency, the temporal backbone, and a
//! full-graph invariant audit.

mod persist;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    normalize_entity, AttributeSet, EdgeKey, EdgeOrigin, EdgeType, EntityNode, EventNode, ModelError, NodeId, Timestamp,
    TypedEdge,
};

pub use persist::{load, parse, save, write_to};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("out-of-order event: node {id} at {timestamp} precedes backbone tail at {tail}")]
    OutOfOrder { id: NodeId, timestamp: Timestamp, tail: Timestamp },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dangling endpoint: node {0} does not exist")]
    DanglingEndpoint(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid edge: {0}")]
    InvalidEdge(String),
    #[error("semantic edge confidence {confidence} below threshold {theta_sim}")]
    BelowThreshold { confidence: f64, theta_sim: f64 },
    #[error("temporal edges are owned by the backbone: {0}")]
    TemporalChain(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Store-wide parameters fixed at creation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSettings {
    pub dimension: usize,
    pub theta_sim: f64,
    /// Clamp regressing timestamps to the backbone tail instead of rejecting.
    #[serde(default)]
    pub clamp_out_of_order: bool,
}

impl Default for GraphSettings {
    fn default() -> Self {
        GraphSettings { dimension: 384, theta_sim: 0.20, clamp_out_of_order: false }
    }
}

/// Nodes plus the edges among them.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Subgraph {
    pub nodes: BTreeSet<NodeId>,
    pub edges: Vec<TypedEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationRule {
    DanglingEndpoint,
    TemporalOrder,
    BackboneShape,
    DuplicateEdge,
    EdgeEndpointKind,
    SemanticThreshold,
    CausalOrientation,
    ConfidenceRange,
    EmbeddingDimension,
}

impl ViolationRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationRule::DanglingEndpoint => "dangling endpoint",
            ViolationRule::TemporalOrder => "temporal order",
            ViolationRule::BackboneShape => "backbone shape",
            ViolationRule::DuplicateEdge => "duplicate edge",
            ViolationRule::EdgeEndpointKind => "edge endpoint kind",
            ViolationRule::SemanticThreshold => "semantic threshold",
            ViolationRule::CausalOrientation => "causal orientation",
            ViolationRule::ConfidenceRange => "confidence range",
            ViolationRule::EmbeddingDimension => "embedding dimension",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: ViolationRule,
    pub ids: Vec<NodeId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.ids.iter().map(|i| i.to_string()).collect();
        write!(f, "{} [{}]: {}", self.rule.as_str(), ids.join(","), self.message)
    }
}

/// One hop from an event to a neighbouring event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventHop {
    pub neighbor: NodeId,
    pub edge_type: EdgeType,
    /// Entity node bridged by an ENTITY hop.
    pub via: Option<NodeId>,
}

#[derive(Debug, Clone, Default)]
pub struct MemoryGraph {
    settings: GraphSettings,
    nodes: BTreeMap<NodeId, EventNode>,
    entities: BTreeMap<NodeId, EntityNode>,
    entity_names: HashMap<String, NodeId>,
    edges: Vec<TypedEdge>,
    edge_keys: HashMap<EdgeKey, usize>,
    out_adj: [HashMap<NodeId, Vec<usize>>; 4],
    in_adj: [HashMap<NodeId, Vec<usize>>; 4],
    last_event_id: Option<NodeId>,
    next_id: u64,
}

impl MemoryGraph {
    pub fn new(settings: GraphSettings) -> Self {
        MemoryGraph { settings, next_id: 1, ..Default::default() }
    }

    pub fn settings(&self) -> &GraphSettings {
        &self.settings
    }

    pub fn allocate_id(&mut self) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn last_event_id(&self) -> Option<NodeId> {
        self.last_event_id
    }

    pub fn node(&self, id: NodeId) -> Option<&EventNode> {
        self.nodes.get(&id)
    }

    pub fn entity(&self, id: NodeId) -> Option<&EntityNode> {
        self.entities.get(&id)
    }

    pub fn entity_by_name(&self, canonical: &str) -> Option<&EntityNode> {
        self.entity_names.get(canonical).and_then(|id| self.entities.get(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id) || self.entities.contains_key(&id)
    }

    /// Events in id order, which for API-built stores is backbone order.
    pub fn nodes(&self) -> impl Iterator<Item = &EventNode> {
        self.nodes.values()
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityNode> {
        self.entities.values()
    }

    pub fn edges(&self) -> &[TypedEdge] {
        &self.edges
    }

    pub fn has_edge(&self, key: &EdgeKey) -> bool {
        self.edge_keys.contains_key(key)
    }

    /// Appends an event to the store and extends the temporal backbone.
    pub fn add_event(&mut self, mut node: EventNode) -> Result<NodeId, GraphError> {
        if self.contains(node.id) {
            return Err(GraphError::DuplicateId(node.id));
        }
        if node.embedding.len() != self.settings.dimension {
            return Err(GraphError::DimensionMismatch { expected: self.settings.dimension, got: node.embedding.len() });
        }
        let prev = self.last_event_id.and_then(|id| self.nodes.get(&id)).map(|n| (n.id, n.timestamp));
        if let Some((_, tail)) = prev {
            if node.timestamp < tail {
                if self.settings.clamp_out_of_order {
                    node.timestamp = tail;
                } else {
                    return Err(GraphError::OutOfOrder { id: node.id, timestamp: node.timestamp, tail });
                }
            }
        }
        let id = node.id;
        let ts = node.timestamp;
        self.next_id = self.next_id.max(id.0 + 1);
        self.nodes.insert(id, node);
        if let Some((prev_id, _)) = prev {
            self.push_edge(TypedEdge::new(prev_id, id, EdgeType::Temporal, 1.0, EdgeOrigin::FastPath, ts));
        }
        self.last_event_id = Some(id);
        Ok(id)
    }

    /// Admits a typed edge. Returns `Ok(false)` when an identical
    /// (src, dst, type) edge already exists.
    pub fn add_edge(&mut self, edge: TypedEdge) -> Result<bool, GraphError> {
        let edge = TypedEdge::new(edge.src, edge.dst, edge.edge_type, edge.confidence, edge.origin, edge.created_at);
        for end in [edge.src, edge.dst] {
            if !self.contains(end) {
                return Err(GraphError::DanglingEndpoint(end));
            }
        }
        if !(0.0..=1.0).contains(&edge.confidence) {
            return Err(GraphError::InvalidEdge(format!("confidence {} outside [0,1]", edge.confidence)));
        }
        if self.edge_keys.contains_key(&edge.key()) {
            return Ok(false);
        }
        match edge.edge_type {
            EdgeType::Entity => {
                if !self.nodes.contains_key(&edge.src) || !self.entities.contains_key(&edge.dst) {
                    return Err(GraphError::InvalidEdge("ENTITY edges link an event to an entity".into()));
                }
            }
            t => {
                if !self.nodes.contains_key(&edge.src) || !self.nodes.contains_key(&edge.dst) {
                    return Err(GraphError::InvalidEdge(format!("{t} edges link two events")));
                }
                if edge.src == edge.dst {
                    return Err(GraphError::InvalidEdge("self loop".into()));
                }
            }
        }
        match edge.edge_type {
            EdgeType::Temporal => {
                return Err(GraphError::TemporalChain(format!("{} -> {} is not a backbone link", edge.src, edge.dst)));
            }
            EdgeType::Semantic if edge.confidence < self.settings.theta_sim => {
                return Err(GraphError::BelowThreshold { confidence: edge.confidence, theta_sim: self.settings.theta_sim });
            }
            EdgeType::Causal if self.order_key(edge.src) > self.order_key(edge.dst) => {
                return Err(GraphError::InvalidEdge(format!("causal edge {} -> {} points backwards in time", edge.src, edge.dst)));
            }
            _ => {}
        }
        self.push_edge(edge);
        Ok(true)
    }

    /// Finds or creates the entity for `surface`, recording the surface form
    /// as an alias.
    pub fn upsert_entity(&mut self, surface: &str) -> Result<NodeId, GraphError> {
        let canonical = normalize_entity(surface)?;
        if let Some(&id) = self.entity_names.get(&canonical) {
            if let Some(e) = self.entities.get_mut(&id) {
                e.aliases.insert(surface.trim().to_string());
            }
            return Ok(id);
        }
        let id = self.allocate_id();
        let entity = EntityNode::new(id, surface)?;
        self.entity_names.insert(canonical, id);
        self.entities.insert(id, entity);
        Ok(id)
    }

    pub fn set_attributes(&mut self, id: NodeId, attributes: AttributeSet) -> Result<(), GraphError> {
        let node = self.nodes.get_mut(&id).ok_or(GraphError::UnknownNode(id))?;
        node.attributes = attributes;
        Ok(())
    }

    pub fn mark_consolidated(&mut self, id: NodeId) -> Result<(), GraphError> {
        let node = self.nodes.get_mut(&id).ok_or(GraphError::UnknownNode(id))?;
        node.consolidated = true;
        Ok(())
    }

    /// Chronological sort key; ties on timestamp fall back to insertion order.
    pub fn order_key(&self, id: NodeId) -> (Timestamp, NodeId) {
        (self.nodes.get(&id).map(|n| n.timestamp).unwrap_or(Timestamp(i64::MIN)), id)
    }

    /// All edges of the given types touching `id`, in either direction.
    pub fn incident<'a>(&'a self, id: NodeId, types: &'a [EdgeType]) -> impl Iterator<Item = &'a TypedEdge> + 'a {
        types.iter().flat_map(move |t| {
            let out = self.out_adj[t.index()].get(&id).into_iter().flatten();
            let inc = self.in_adj[t.index()].get(&id).into_iter().flatten();
            out.chain(inc).map(move |&i| &self.edges[i])
        })
    }

    /// Event-level neighbours of an event. ENTITY hops are collapsed: two
    /// events are ENTITY-adjacent when they link to a common entity node.
    pub fn event_neighbors(&self, id: NodeId, types: &[EdgeType]) -> Vec<EventHop> {
        let mut hops = Vec::new();
        for &t in types {
            for edge in self.incident(id, std::slice::from_ref(&t)) {
                let other = edge.other(id);
                if t == EdgeType::Entity {
                    if !self.entities.contains_key(&other) {
                        continue;
                    }
                    for back in self.incident(other, &[EdgeType::Entity]) {
                        let ev = back.other(other);
                        if ev != id && self.nodes.contains_key(&ev) {
                            hops.push(EventHop { neighbor: ev, edge_type: t, via: Some(other) });
                        }
                    }
                } else if other != id && self.nodes.contains_key(&other) {
                    hops.push(EventHop { neighbor: other, edge_type: t, via: None });
                }
            }
        }
        hops
    }

    /// Breadth-first closure of `hops` rings around `center` over the
    /// selected edge types (directed edges walked both ways), with every
    /// induced edge of those types among the returned nodes.
    pub fn neighborhood(&self, center: NodeId, hops: usize, edge_types: &[EdgeType]) -> Result<Subgraph, GraphError> {
        if !self.contains(center) {
            return Err(GraphError::UnknownNode(center));
        }
        let mut seen = BTreeSet::from([center]);
        let mut queue = VecDeque::from([(center, 0usize)]);
        while let Some((id, depth)) = queue.pop_front() {
            if depth == hops {
                continue;
            }
            for edge in self.incident(id, edge_types) {
                let other = edge.other(id);
                if self.contains(other) && seen.insert(other) {
                    queue.push_back((other, depth + 1));
                }
            }
        }
        let mut edges: Vec<TypedEdge> = Vec::new();
        let mut keys = BTreeSet::new();
        for &id in &seen {
            for edge in self.incident(id, edge_types) {
                if seen.contains(&edge.src) && seen.contains(&edge.dst) && keys.insert(edge.key()) {
                    edges.push(edge.clone());
                }
            }
        }
        edges.sort_by_key(|e| e.key());
        Ok(Subgraph { nodes: seen, edges })
    }

    /// Checks every store invariant. An empty result means the graph is sound.
    pub fn audit(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |rule, ids: Vec<NodeId>, message: String| out.push(Violation { rule, ids, message });

        for node in self.nodes.values() {
            if node.embedding.len() != self.settings.dimension {
                push(
                    ViolationRule::EmbeddingDimension,
                    vec![node.id],
                    format!("embedding has {} dims, store uses {}", node.embedding.len(), self.settings.dimension),
                );
            }
        }

        let mut seen_keys = HashMap::new();
        let mut temporal_in: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        let mut temporal_out: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for edge in &self.edges {
            let ids = vec![edge.src, edge.dst];
            let missing: Vec<NodeId> = ids.iter().copied().filter(|&i| !self.contains(i)).collect();
            if !missing.is_empty() {
                push(ViolationRule::DanglingEndpoint, ids, format!("{} edge references missing node(s) {:?}", edge.edge_type, missing));
                continue;
            }
            if *seen_keys.entry(edge.key()).and_modify(|c| *c += 1).or_insert(1) == 2 {
                push(ViolationRule::DuplicateEdge, ids.clone(), format!("{} edge stored more than once", edge.edge_type));
            }
            if !(0.0..=1.0).contains(&edge.confidence) {
                push(ViolationRule::ConfidenceRange, ids.clone(), format!("confidence {}", edge.confidence));
            }
            let events_both = self.nodes.contains_key(&edge.src) && self.nodes.contains_key(&edge.dst);
            match edge.edge_type {
                EdgeType::Entity => {
                    if !(self.nodes.contains_key(&edge.src) && self.entities.contains_key(&edge.dst)) {
                        push(ViolationRule::EdgeEndpointKind, ids, "ENTITY edge must link event -> entity".into());
                    }
                    continue;
                }
                t if !events_both => {
                    push(ViolationRule::EdgeEndpointKind, ids, format!("{t} edge must link two events"));
                    continue;
                }
                _ => {}
            }
            let (ts_src, ts_dst) = (self.nodes[&edge.src].timestamp, self.nodes[&edge.dst].timestamp);
            match edge.edge_type {
                EdgeType::Temporal => {
                    if ts_src > ts_dst {
                        push(ViolationRule::TemporalOrder, ids, format!("{ts_src} is later than {ts_dst}"));
                    }
                    temporal_out.entry(edge.src).or_default().push(edge.dst);
                    temporal_in.entry(edge.dst).or_default().push(edge.src);
                }
                EdgeType::Causal => {
                    if self.order_key(edge.src) > self.order_key(edge.dst) {
                        push(ViolationRule::CausalOrientation, ids, "cause is later than effect".into());
                    }
                }
                EdgeType::Semantic => {
                    if edge.confidence < self.settings.theta_sim {
                        push(
                            ViolationRule::SemanticThreshold,
                            ids,
                            format!("confidence {} below theta_sim {}", edge.confidence, self.settings.theta_sim),
                        );
                    }
                }
                EdgeType::Entity => unreachable!(),
            }
        }

        if self.nodes.is_empty() {
            if let Some(id) = self.last_event_id {
                push(ViolationRule::BackboneShape, vec![id], "tail set on an empty store".into());
            }
            return out;
        }
        for (id, srcs) in &temporal_in {
            if srcs.len() > 1 {
                push(ViolationRule::BackboneShape, vec![*id], format!("{} incoming TEMPORAL edges", srcs.len()));
            }
        }
        for (id, dsts) in &temporal_out {
            if dsts.len() > 1 {
                push(ViolationRule::BackboneShape, vec![*id], format!("{} outgoing TEMPORAL edges", dsts.len()));
            }
        }
        let heads: Vec<NodeId> = self.nodes.keys().copied().filter(|id| !temporal_in.contains_key(id)).collect();
        if heads.len() != 1 {
            push(ViolationRule::BackboneShape, heads.clone(), format!("backbone has {} heads", heads.len()));
        } else {
            let mut visited = BTreeSet::new();
            let mut cur = heads[0];
            loop {
                if !visited.insert(cur) {
                    push(ViolationRule::BackboneShape, vec![cur], "backbone contains a cycle".into());
                    break;
                }
                match temporal_out.get(&cur).and_then(|d| d.first()) {
                    Some(&next) => cur = next,
                    None => break,
                }
            }
            if visited.len() != self.nodes.len() {
                let unreached: Vec<NodeId> = self.nodes.keys().copied().filter(|id| !visited.contains(id)).collect();
                push(ViolationRule::BackboneShape, unreached, "events not on the backbone chain".into());
            }
            if self.last_event_id != Some(cur) {
                push(ViolationRule::BackboneShape, vec![cur], format!("tail is {cur} but last_event_id is {:?}", self.last_event_id));
            }
        }
        out
    }

    fn push_edge(&mut self, edge: TypedEdge) {
        let idx = self.edges.len();
        let t = edge.edge_type.index();
        self.edge_keys.insert(edge.key(), idx);
        self.out_adj[t].entry(edge.src).or_default().push(idx);
        self.in_adj[t].entry(edge.dst).or_default().push(idx);
        self.edges.push(edge);
    }

    /// Rebuilds a graph from raw parts without validation, so that a
    /// damaged file can still be loaded and audited.
    pub(crate) fn from_parts(
        settings: GraphSettings,
        nodes: Vec<EventNode>,
        entities: Vec<EntityNode>,
        edges: Vec<TypedEdge>,
        next_id: u64,
        last_event_id: Option<NodeId>,
    ) -> Self {
        let mut g = MemoryGraph::new(settings);
        for n in nodes {
            g.next_id = g.next_id.max(n.id.0 + 1);
            g.nodes.insert(n.id, n);
        }
        for e in entities {
            g.next_id = g.next_id.max(e.id.0 + 1);
            g.entity_names.insert(e.canonical_name.clone(), e.id);
            g.entities.insert(e.id, e);
        }
        for e in edges {
            g.push_edge(e);
        }
        g.next_id = g.next_id.max(next_id);
        g.last_event_id = last_event_id;
        g
    }
}
