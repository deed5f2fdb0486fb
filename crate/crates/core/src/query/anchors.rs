//! Reciprocal rank fusion of the vector, keyword and time-window signals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{QueryError, QueryPlan};
use crate::index::IndexSet;
use crate::model::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub rrf_k: f64,
    pub vector_top_k: usize,
    pub keyword_top_k: usize,
    pub anchor_top_k: usize,
    pub vector_weight: f64,
    pub keyword_weight: f64,
    pub time_weight: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            rrf_k: 60.0,
            vector_top_k: 20,
            keyword_top_k: 20,
            anchor_top_k: 8,
            vector_weight: 1.0,
            keyword_weight: 3.0,
            time_weight: 1.0,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<(), QueryError> {
        if self.rrf_k.is_nan() || self.rrf_k <= 0.0 {
            return Err(QueryError::InvalidConfig("rrf_k must be positive".into()));
        }
        if self.vector_top_k == 0 || self.keyword_top_k == 0 || self.anchor_top_k == 0 {
            return Err(QueryError::InvalidConfig("top-k values must be at least 1".into()));
        }
        if [self.vector_weight, self.keyword_weight, self.time_weight].iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(QueryError::InvalidConfig("signal weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// One ranked signal: its list weight and ids in rank order (rank 1 first).
#[derive(Debug, Clone, Copy)]
pub struct Signal<'a> {
    pub weight: f64,
    pub ranked: &'a [NodeId],
}

/// `fused(n) = Σ weight_m / (k + rank_m(n))` over the signals that returned
/// `n`, sorted by descending score with ascending id on ties. A node listed
/// twice in one signal counts at its best rank.
pub fn rrf_fuse(signals: &[Signal<'_>], k: f64) -> Vec<(NodeId, f64)> {
    let mut fused: BTreeMap<NodeId, f64> = BTreeMap::new();
    for signal in signals {
        let mut seen = std::collections::HashSet::new();
        for (i, &id) in signal.ranked.iter().enumerate() {
            if seen.insert(id) {
                *fused.entry(id).or_insert(0.0) += signal.weight / (k + (i + 1) as f64);
            }
        }
    }
    let mut out: Vec<(NodeId, f64)> = fused.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Ranked lists produced for a plan, kept for diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalLists {
    pub vector: Vec<NodeId>,
    pub keyword: Vec<NodeId>,
    pub time: Vec<NodeId>,
}

pub fn signal_lists(plan: &QueryPlan, indexes: &IndexSet, cfg: &AnchorConfig) -> Result<SignalLists, QueryError> {
    // Zero-similarity hits carry no evidence, so they do not count as a match.
    let vector = indexes
        .vectors
        .search(&plan.embedding, cfg.vector_top_k)?
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(id, _)| id)
        .collect();
    let keyword = if plan.keywords.is_empty() {
        Vec::new()
    } else {
        indexes.keywords.search(&plan.keywords, cfg.keyword_top_k)?.into_iter().map(|(id, _)| id).collect()
    };
    let time = match plan.window {
        Some(w) => {
            let mut ids = indexes.times.filter(w.start, w.end)?;
            ids.reverse();
            ids
        }
        None => Vec::new(),
    };
    Ok(SignalLists { vector, keyword, time })
}

/// Top `anchor_top_k` nodes by fused score. Empty when every signal is empty.
pub fn find_anchors(plan: &QueryPlan, indexes: &IndexSet, cfg: &AnchorConfig) -> Result<Vec<(NodeId, f64)>, QueryError> {
    cfg.validate()?;
    let lists = signal_lists(plan, indexes, cfg)?;
    Ok(fuse_lists(&lists, cfg))
}

pub fn fuse_lists(lists: &SignalLists, cfg: &AnchorConfig) -> Vec<(NodeId, f64)> {
    let signals = [
        Signal { weight: cfg.vector_weight, ranked: &lists.vector },
        Signal { weight: cfg.keyword_weight, ranked: &lists.keyword },
        Signal { weight: cfg.time_weight, ranked: &lists.time },
    ];
    let mut fused = rrf_fuse(&signals, cfg.rrf_k);
    fused.truncate(cfg.anchor_top_k);
    fused
}
