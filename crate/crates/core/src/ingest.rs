//! Fast path: segment an interaction into events, embed them, extend the
//! backbone, index and enqueue. The encoder is the only external call made
//! here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, MemoryGraph};
use crate::index::{IndexError, IndexSet};
use crate::model::{AttributeSet, EventNode, NodeId, Timestamp};
use crate::provider::{Embedder, ProviderError};
use crate::queue::{ConsolidationQueue, QueueError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("interaction text is blank")]
    BlankText,
    #[error("encoder failed, interaction rejected: {0}")]
    Encoder(#[from] ProviderError),
    #[error("encoder returned {got} embeddings for {expected} events")]
    EncoderCount { expected: usize, got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    #[serde(default)]
    pub speaker: String,
    pub text: String,
    pub timestamp: Timestamp,
    /// The timestamp as written in the source transcript.
    #[serde(default)]
    pub timestamp_text: String,
    #[serde(default)]
    pub session: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentPolicy {
    /// One event per interaction turn.
    #[default]
    PerTurn,
    /// One event per blank-line separated paragraph.
    SplitParagraphs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventDraft {
    pub content: String,
    pub timestamp: Timestamp,
    pub timestamp_text: String,
    pub speaker: String,
    pub episode_id: Option<String>,
}

pub fn segment_event(interaction: &Interaction, policy: SegmentPolicy) -> Result<Vec<EventDraft>, IngestError> {
    if interaction.text.trim().is_empty() {
        return Err(IngestError::BlankText);
    }
    let pieces: Vec<&str> = match policy {
        SegmentPolicy::PerTurn => vec![interaction.text.as_str()],
        SegmentPolicy::SplitParagraphs => {
            interaction.text.split("\n\n").map(str::trim).filter(|p| !p.is_empty()).collect()
        }
    };
    let episode_id = Some(interaction.session.clone()).filter(|s| !s.is_empty());
    Ok(pieces
        .into_iter()
        .map(|content| EventDraft {
            content: content.to_string(),
            timestamp: interaction.timestamp,
            timestamp_text: interaction.timestamp_text.clone(),
            speaker: interaction.speaker.clone(),
            episode_id: episode_id.clone(),
        })
        .collect())
}

/// Embeds every draft in one encoder call, then inserts them in order. The
/// graph is untouched unless every embedding succeeds and every draft can be
/// placed on the backbone.
pub fn ingest(
    graph: &mut MemoryGraph,
    indexes: &mut IndexSet,
    queue: &mut ConsolidationQueue,
    embedder: &dyn Embedder,
    interaction: &Interaction,
    policy: SegmentPolicy,
) -> Result<Vec<NodeId>, IngestError> {
    let drafts = segment_event(interaction, policy)?;
    let embeddings = embed_drafts(embedder, &drafts)?;
    insert_drafts(graph, indexes, queue, drafts, embeddings)
}

pub fn embed_drafts(embedder: &dyn Embedder, drafts: &[EventDraft]) -> Result<Vec<Vec<f32>>, IngestError> {
    let texts: Vec<String> = drafts.iter().map(|d| d.content.clone()).collect();
    let embeddings = embedder.embed(&texts)?;
    if embeddings.len() != drafts.len() {
        return Err(IngestError::EncoderCount { expected: drafts.len(), got: embeddings.len() });
    }
    Ok(embeddings)
}

/// Second half of [`ingest`], for callers that embed outside their lock.
pub fn insert_drafts(
    graph: &mut MemoryGraph,
    indexes: &mut IndexSet,
    queue: &mut ConsolidationQueue,
    drafts: Vec<EventDraft>,
    embeddings: Vec<Vec<f32>>,
) -> Result<Vec<NodeId>, IngestError> {
    let dimension = graph.settings().dimension;
    if let Some(bad) = embeddings.iter().find(|e| e.len() != dimension) {
        return Err(GraphError::DimensionMismatch { expected: dimension, got: bad.len() }.into());
    }
    if let (Some(first), Some(tail)) = (drafts.first(), graph.last_event_id().and_then(|id| graph.node(id))) {
        if first.timestamp < tail.timestamp && !graph.settings().clamp_out_of_order {
            return Err(GraphError::OutOfOrder { id: NodeId(graph.next_id()), timestamp: first.timestamp, tail: tail.timestamp }.into());
        }
    }
    let mut ids = Vec::with_capacity(drafts.len());
    for (draft, embedding) in drafts.into_iter().zip(embeddings) {
        let id = graph.allocate_id();
        let node = EventNode {
            id,
            content: draft.content,
            timestamp: draft.timestamp,
            timestamp_text: draft.timestamp_text,
            embedding,
            attributes: AttributeSet { speaker: draft.speaker, ..Default::default() },
            episode_id: draft.episode_id,
            consolidated: false,
        };
        graph.add_event(node)?;
        indexes.index_event(graph.node(id).expect("just inserted"))?;
        queue.enqueue(id)?;
        ids.push(id);
    }
    Ok(ids)
}
