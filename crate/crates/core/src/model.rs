//! Domain types shared across the engine: event and entity nodes, typed
//! edges, the edge-type taxonomy, and query intents.

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("degenerate entity: {0:?} is empty after normalization")]
    DegenerateEntity(String),
    #[error("invalid timestamp: {0:?}")]
    InvalidTimestamp(String),
}

/// Identifier shared by event and entity nodes. Allocated monotonically by
/// the store, so ascending id order is also insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// UTC instant at second resolution, stored as epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Timestamp(dt.timestamp())
    }

    pub fn from_ymd_hms(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(y, mo, d)
            .and_then(|date| date.and_hms_opt(h, mi, s))
            .map(|ndt| Timestamp(ndt.and_utc().timestamp()))
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0, 0).unwrap_or_default()
    }

    pub fn date(self) -> NaiveDate {
        self.to_datetime().date_naive()
    }

    /// `YYYY-MM-DDTHH:MM:SSZ`
    pub fn to_iso(self) -> String {
        self.to_datetime().format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }

    /// Accepts RFC 3339, `YYYY-MM-DD HH:MM[:SS]`, `YYYY-MM-DD`, and the
    /// conversational `1:56 pm on 8 May, 2023` style. Values without an
    /// offset are read as UTC.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let s = text.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Timestamp(dt.timestamp()));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
            if let Ok(ndt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(Timestamp(ndt.and_utc().timestamp()));
            }
        }
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(Timestamp(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp()));
        }
        let lowered = s.to_lowercase();
        for fmt in ["%I:%M %P on %d %B, %Y", "%I:%M %P on %d %B %Y", "%H:%M on %d %B, %Y"] {
            if let Ok(ndt) = NaiveDateTime::parse_from_str(&lowered, fmt) {
                return Ok(Timestamp(ndt.and_utc().timestamp()));
            }
        }
        for fmt in ["%d %B %Y", "%d %B, %Y", "%B %d, %Y"] {
            if let Ok(d) = NaiveDate::parse_from_str(&lowered, fmt) {
                return Ok(Timestamp(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp()));
            }
        }
        Err(ModelError::InvalidTimestamp(text.to_string()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

/// Structured metadata attached to an event. Filled by the extractor during
/// consolidation; every field is always present, possibly empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeSet {
    pub entities: Vec<String>,
    pub topic: String,
    pub relationships: Vec<String>,
    pub semantic_facts: Vec<String>,
    pub dates_mentioned: Vec<String>,
    pub speaker: String,
    pub summary: String,
}

impl AttributeSet {
    /// Every text fragment worth indexing lexically.
    pub fn text_fields(&self) -> impl Iterator<Item = &str> {
        self.entities
            .iter()
            .chain(self.relationships.iter())
            .chain(self.semantic_facts.iter())
            .chain(self.dates_mentioned.iter())
            .map(String::as_str)
            .chain([self.topic.as_str(), self.speaker.as_str(), self.summary.as_str()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventNode {
    pub id: NodeId,
    pub content: String,
    pub timestamp: Timestamp,
    /// The timestamp as it appeared in the source, for display.
    #[serde(default)]
    pub timestamp_text: String,
    pub embedding: Vec<f32>,
    #[serde(default)]
    pub attributes: AttributeSet,
    #[serde(default)]
    pub episode_id: Option<String>,
    /// Set once the slow path has finished with this node.
    #[serde(default)]
    pub consolidated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: NodeId,
    pub canonical_name: String,
    pub aliases: BTreeSet<String>,
}

impl EntityNode {
    pub fn new(id: NodeId, surface: &str) -> Result<Self, ModelError> {
        let canonical_name = normalize_entity(surface)?;
        let mut aliases = BTreeSet::new();
        aliases.insert(canonical_name.clone());
        aliases.insert(surface.trim().to_string());
        Ok(EntityNode { id, canonical_name, aliases })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeType {
    Temporal,
    Causal,
    Semantic,
    Entity,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [EdgeType::Temporal, EdgeType::Causal, EdgeType::Semantic, EdgeType::Entity];

    pub fn is_directed(self) -> bool {
        matches!(self, EdgeType::Temporal | EdgeType::Causal)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Temporal => "TEMPORAL",
            EdgeType::Causal => "CAUSAL",
            EdgeType::Semantic => "SEMANTIC",
            EdgeType::Entity => "ENTITY",
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeOrigin {
    FastPath,
    Consolidation,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub edge_type: EdgeType,
    pub confidence: f64,
    pub origin: EdgeOrigin,
    pub created_at: Timestamp,
}

/// Identity of an edge for duplicate detection.
pub type EdgeKey = (NodeId, NodeId, EdgeType);

impl TypedEdge {
    pub fn new(src: NodeId, dst: NodeId, edge_type: EdgeType, confidence: f64, origin: EdgeOrigin, created_at: Timestamp) -> Self {
        let (src, dst) = if edge_type == EdgeType::Semantic && dst < src { (dst, src) } else { (src, dst) };
        TypedEdge { src, dst, edge_type, confidence, origin, created_at }
    }

    pub fn key(&self) -> EdgeKey {
        (self.src, self.dst, self.edge_type)
    }

    pub fn other(&self, id: NodeId) -> NodeId {
        if self.src == id { self.dst } else { self.src }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntentLabel {
    Why,
    When,
    Entity,
    General,
}

impl IntentLabel {
    pub const ALL: [IntentLabel; 4] = [IntentLabel::Why, IntentLabel::When, IntentLabel::Entity, IntentLabel::General];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentLabel::Why => "WHY",
            IntentLabel::When => "WHEN",
            IntentLabel::Entity => "ENTITY",
            IntentLabel::General => "GENERAL",
        }
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Canonical form of an entity mention: lower-cased, inner whitespace
/// collapsed, surrounding punctuation stripped.
pub fn normalize_entity(name: &str) -> Result<String, ModelError> {
    let collapsed = name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let trimmed = collapsed.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        return Err(ModelError::DegenerateEntity(name.to_string()));
    }
    Ok(trimmed.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_entity("  Melanie ").unwrap(), "melanie");
        assert_eq!(normalize_entity("Melanie").unwrap(), "melanie");
        assert_eq!(normalize_entity("JOHN  SMITH").unwrap(), "john smith");
        assert_eq!(normalize_entity("\"Caroline's\",").unwrap(), "caroline's");
    }

    #[test]
    fn normalize_rejects_degenerate() {
        assert!(matches!(normalize_entity("   "), Err(ModelError::DegenerateEntity(_))));
        assert!(matches!(normalize_entity(" ?! "), Err(ModelError::DegenerateEntity(_))));
    }

    #[test]
    fn entity_aliases_contain_canonical() {
        let e = EntityNode::new(NodeId(3), " Melanie ").unwrap();
        assert!(e.aliases.contains("melanie"));
        assert!(e.aliases.contains("Melanie"));
    }

    #[test]
    fn semantic_edges_normalize_endpoints() {
        let e = TypedEdge::new(NodeId(9), NodeId(2), EdgeType::Semantic, 0.5, EdgeOrigin::Manual, Timestamp(0));
        assert_eq!((e.src, e.dst), (NodeId(2), NodeId(9)));
        let c = TypedEdge::new(NodeId(9), NodeId(2), EdgeType::Causal, 0.5, EdgeOrigin::Manual, Timestamp(0));
        assert_eq!((c.src, c.dst), (NodeId(9), NodeId(2)));
    }

    #[test]
    fn timestamp_formats() {
        let t = Timestamp::parse("2023-10-20").unwrap();
        assert_eq!(t.to_iso(), "2023-10-20T00:00:00Z");
        assert_eq!(Timestamp::parse("1:56 pm on 8 May, 2023").unwrap().to_iso(), "2023-05-08T13:56:00Z");
        assert_eq!(Timestamp::parse("2023-10-19T08:30:00Z").unwrap().to_iso(), "2023-10-19T08:30:00Z");
        assert_eq!(Timestamp::parse("19 October 2023").unwrap().to_iso(), "2023-10-19T00:00:00Z");
        assert!(Timestamp::parse("someday").is_err());
    }

    #[test]
    fn edge_json_shape() {
        let e = TypedEdge::new(NodeId(1), NodeId(2), EdgeType::Causal, 0.9, EdgeOrigin::Consolidation, Timestamp(10));
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["edge_type"], "CAUSAL");
        assert_eq!(v["origin"], "CONSOLIDATION");
        assert_eq!(v["src"], 1);
    }

    fn arb_attributes() -> impl Strategy<Value = AttributeSet> {
        (
            prop::collection::vec(".{0,8}", 0..3),
            ".{0,8}",
            prop::collection::vec(".{0,8}", 0..3),
            ".{0,12}",
        )
            .prop_map(|(entities, topic, facts, summary)| AttributeSet {
                entities,
                topic,
                semantic_facts: facts,
                summary,
                ..Default::default()
            })
    }

    proptest! {
        #[test]
        fn event_node_round_trips(
            id in any::<u64>(),
            content in ".{0,40}",
            ts in -1_000_000_000i64..4_000_000_000,
            embedding in prop::collection::vec(-1.0f32..1.0, 0..16),
            attributes in arb_attributes(),
            episode in prop::option::of("[a-z0-9]{1,6}"),
        ) {
            let node = EventNode {
                id: NodeId(id),
                content,
                timestamp: Timestamp(ts),
                timestamp_text: String::new(),
                embedding,
                attributes,
                episode_id: episode,
                consolidated: false,
            };
            let back: EventNode = serde_json::from_str(&serde_json::to_string(&node).unwrap()).unwrap();
            prop_assert_eq!(back, node);
        }

        #[test]
        fn typed_edge_round_trips(src in any::<u64>(), dst in any::<u64>(), t in 0usize..4, conf in 0.0f64..=1.0, ts in any::<i32>()) {
            let edge = TypedEdge::new(NodeId(src), NodeId(dst), EdgeType::ALL[t], conf, EdgeOrigin::Manual, Timestamp(ts as i64));
            let back: TypedEdge = serde_json::from_str(&serde_json::to_string(&edge).unwrap()).unwrap();
            prop_assert_eq!(back, edge);
        }
    }
}
