//! Candidate generators for anchor fusion: an exact cosine vector index, a
//! tf-idf keyword index, and a timestamp index for hard time windows.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::model::{EventNode, NodeId, Timestamp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("query dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("inverted time window: {start} > {end}")]
    InvertedWindow { start: Timestamp, end: Timestamp },
}

/// Fixed stopword list shared by the keyword index, the hashed encoder and
/// query keyword extraction.
pub const STOPWORDS: [&str; 50] = [
    "a", "an", "the", "and", "or", "but", "if", "of", "at", "by", "for", "with", "about", "to", "from", "in", "on",
    "into", "is", "are", "was", "were", "be", "been", "am", "do", "does", "did", "have", "has", "had", "i", "me", "my",
    "we", "you", "your", "he", "she", "it", "they", "this", "that", "what", "which", "who", "when", "where", "why",
    "how",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Lower-cases, splits on anything that is not alphanumeric, and drops
/// stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !is_stopword(t))
        .map(str::to_string)
        .collect()
}

/// Cosine similarity in f64; zero when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn rank_desc(mut scored: Vec<(NodeId, f64)>, top_k: usize) -> Vec<(NodeId, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_k);
    scored
}

#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    dimension: usize,
    vectors: BTreeMap<NodeId, Vec<f32>>,
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        VectorIndex { dimension, vectors: BTreeMap::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.vectors.contains_key(&id)
    }

    pub fn get(&self, id: NodeId) -> Option<&[f32]> {
        self.vectors.get(&id).map(Vec::as_slice)
    }

    pub fn insert(&mut self, id: NodeId, embedding: Vec<f32>) -> Result<(), IndexError> {
        if embedding.len() != self.dimension {
            return Err(IndexError::DimensionMismatch { expected: self.dimension, got: embedding.len() });
        }
        self.vectors.insert(id, embedding);
        Ok(())
    }

    /// Exact top-k by cosine similarity, descending, ties by ascending id.
    pub fn search(&self, query: &[f32], top_k: usize) -> Result<Vec<(NodeId, f64)>, IndexError> {
        if query.len() != self.dimension {
            return Err(IndexError::DimensionMismatch { expected: self.dimension, got: query.len() });
        }
        if top_k == 0 {
            return Err(IndexError::ZeroTopK);
        }
        let scored = self.vectors.iter().map(|(&id, v)| (id, cosine(query, v))).collect();
        Ok(rank_desc(scored, top_k))
    }
}

#[derive(Debug, Clone, Default)]
pub struct KeywordIndex {
    postings: HashMap<String, BTreeMap<NodeId, u32>>,
    doc_terms: HashMap<NodeId, Vec<String>>,
}

impl KeywordIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_terms.len()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.doc_terms.contains_key(&id)
    }

    pub fn doc_len(&self, id: NodeId) -> usize {
        self.doc_terms.get(&id).map_or(0, Vec::len)
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, BTreeMap::len)
    }

    pub fn term_frequency(&self, term: &str, id: NodeId) -> u32 {
        self.postings.get(term).and_then(|p| p.get(&id)).copied().unwrap_or(0)
    }

    /// Indexes (or re-indexes) a document made of several text fragments.
    pub fn upsert<'a>(&mut self, id: NodeId, fragments: impl IntoIterator<Item = &'a str>) {
        self.remove(id);
        let terms: Vec<String> = fragments.into_iter().flat_map(tokenize).collect();
        for t in &terms {
            *self.postings.entry(t.clone()).or_default().entry(id).or_insert(0) += 1;
        }
        self.doc_terms.insert(id, terms);
    }

    pub fn remove(&mut self, id: NodeId) {
        let Some(terms) = self.doc_terms.remove(&id) else { return };
        for t in terms {
            if let Some(p) = self.postings.get_mut(&t) {
                p.remove(&id);
                if p.is_empty() {
                    self.postings.remove(&t);
                }
            }
        }
    }

    /// Scores each document by the sum over distinct query terms of
    /// `tf * ln(1 + N/df)`. A query that is all stopwords yields nothing.
    pub fn search(&self, keywords: &[String], top_k: usize) -> Result<Vec<(NodeId, f64)>, IndexError> {
        if top_k == 0 {
            return Err(IndexError::ZeroTopK);
        }
        let terms: BTreeSet<String> = keywords.iter().flat_map(|k| tokenize(k)).collect();
        let n = self.doc_count() as f64;
        let mut scores: BTreeMap<NodeId, f64> = BTreeMap::new();
        for term in &terms {
            let Some(posting) = self.postings.get(term) else { continue };
            let idf = (1.0 + n / posting.len() as f64).ln();
            for (&id, &tf) in posting {
                *scores.entry(id).or_insert(0.0) += tf as f64 * idf;
            }
        }
        Ok(rank_desc(scores.into_iter().collect(), top_k))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TemporalIndex {
    entries: BTreeSet<(Timestamp, NodeId)>,
}

impl TemporalIndex {
    pub fn insert(&mut self, id: NodeId, ts: Timestamp) {
        self.entries.insert((ts, id));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ids with `start <= timestamp <= end`, ascending by timestamp.
    pub fn filter(&self, start: Timestamp, end: Timestamp) -> Result<Vec<NodeId>, IndexError> {
        if start > end {
            return Err(IndexError::InvertedWindow { start, end });
        }
        Ok(self.entries.range((start, NodeId(0))..=(end, NodeId(u64::MAX))).map(|&(_, id)| id).collect())
    }

    /// The `n` most recent ids, newest first.
    pub fn most_recent(&self, n: usize) -> Vec<NodeId> {
        self.entries.iter().rev().take(n).map(|&(_, id)| id).collect()
    }
}

/// The three indexes kept in lockstep with the event store.
#[derive(Debug, Clone, Default)]
pub struct IndexSet {
    pub vectors: VectorIndex,
    pub keywords: KeywordIndex,
    pub times: TemporalIndex,
}

impl IndexSet {
    pub fn new(dimension: usize) -> Self {
        IndexSet { vectors: VectorIndex::new(dimension), keywords: KeywordIndex::new(), times: TemporalIndex::default() }
    }

    pub fn index_event(&mut self, node: &EventNode) -> Result<(), IndexError> {
        self.vectors.insert(node.id, node.embedding.clone())?;
        self.keywords.upsert(node.id, std::iter::once(node.content.as_str()).chain(node.attributes.text_fields()));
        self.times.insert(node.id, node.timestamp);
        Ok(())
    }

    pub fn build<'a>(dimension: usize, nodes: impl IntoIterator<Item = &'a EventNode>) -> Result<Self, IndexError> {
        let mut set = IndexSet::new(dimension);
        for n in nodes {
            set.index_event(n)?;
        }
        Ok(set)
    }
}
