//! The engine shared by the CLI and the HTTP service: one store, its
//! indexes, the consolidation queue and the configured providers behind a
//! single-writer / many-reader discipline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, EngineConfig};
use crate::consolidate::{
    apply_causal, apply_extraction, causal_request, extraction_job, run_extraction, run_reasoner, ConsolidateError,
    ConsolidationReport, SlowPathProviders, WorkerSummary,
};
use crate::graph::{self, GraphError, MemoryGraph, Violation};
use crate::index::{IndexError, IndexSet};
use crate::ingest::{embed_drafts, insert_drafts, segment_event, IngestError, Interaction};
use crate::model::{EdgeType, NodeId, Timestamp};
use crate::provider::{
    judge, synthesize_answer, ChatProvider, Embedder, HashEmbedder, HttpChat, HttpEmbedder, Judgement, MockChat,
    MockRules, ProviderConfig, ProviderError, ProviderKind, ProviderRole,
};
use crate::query::{retrieve, QueryError, Retrieval, RetrievalConfig};
use crate::queue::{ConsolidationQueue, QueueError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const GRAPH_FILE: &str = "graph.jsonl";
pub const QUEUE_FILE: &str = "queue.jsonl";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] GraphError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Consolidate(#[from] ConsolidateError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("store {path} was built with dimension {stored}, config says {configured}")]
    DimensionConflict { path: String, stored: usize, configured: usize },
}

/// The configured provider for every role. Chat roles set to `disabled`
/// are `None`.
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Embedder>,
    pub extractor: Option<Arc<dyn ChatProvider>>,
    pub reasoner: Option<Arc<dyn ChatProvider>>,
    pub answerer: Option<Arc<dyn ChatProvider>>,
    pub judge: Option<Arc<dyn ChatProvider>>,
}

fn chat_for(role: ProviderRole, cfg: &ProviderConfig, rules: &MockRules) -> Result<Option<Arc<dyn ChatProvider>>, ProviderError> {
    Ok(match cfg.kind {
        ProviderKind::Mock => Some(Arc::new(MockChat::new(role, rules.clone())?)),
        ProviderKind::Http => Some(Arc::new(HttpChat::new(cfg.clone()))),
        ProviderKind::Disabled => None,
    })
}

impl Providers {
    pub fn from_config(cfg: &EngineConfig) -> Result<Self, ProviderError> {
        let rules = if cfg.mock_rules.is_empty() { MockRules::default() } else { MockRules::load(Path::new(&cfg.mock_rules))? };
        let embedder: Arc<dyn Embedder> = match cfg.embedder.kind {
            ProviderKind::Mock => Arc::new(HashEmbedder::new(cfg.dimension)),
            ProviderKind::Http => Arc::new(HttpEmbedder::new(cfg.embedder.clone(), cfg.dimension)),
            ProviderKind::Disabled => return Err(ProviderError::NotConfigured { role: ProviderRole::Embedder }),
        };
        Ok(Providers {
            embedder,
            extractor: chat_for(ProviderRole::Extractor, &cfg.extractor, &rules)?,
            reasoner: chat_for(ProviderRole::Reasoner, &cfg.reasoner, &rules)?,
            answerer: chat_for(ProviderRole::Answerer, &cfg.answerer, &rules)?,
            judge: chat_for(ProviderRole::Judge, &cfg.judge, &rules)?,
        })
    }
}

pub struct State {
    pub graph: MemoryGraph,
    pub indexes: IndexSet,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub events: usize,
    pub entities: usize,
    pub edges: BTreeMap<String, usize>,
    pub consolidated: usize,
    pub queue_len: usize,
    pub enqueued: u64,
    pub dequeued: u64,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub retrieval: Retrieval,
    pub answer: Option<String>,
    /// Set when an answer was requested but the answerer failed; the
    /// retrieval is still returned.
    pub answer_error: Option<String>,
    /// Events created by writing the exchange back into memory.
    pub written_back: Vec<NodeId>,
}

pub struct Engine {
    config: EngineConfig,
    hash: String,
    providers: Providers,
    state: RwLock<State>,
    queue: Mutex<ConsolidationQueue>,
    write_gate: Mutex<()>,
    store_dir: Option<PathBuf>,
}

impl Engine {
    /// Opens (or creates) the store at `config.store_path`.
    pub fn open(config: EngineConfig, providers: Providers) -> Result<Self, EngineError> {
        config.validate()?;
        let dir = PathBuf::from(&config.store_path);
        let graph_path = dir.join(GRAPH_FILE);
        let graph = if graph_path.exists() {
            let g = graph::load(&graph_path)?;
            if g.settings().dimension != config.dimension {
                return Err(EngineError::DimensionConflict {
                    path: graph_path.display().to_string(),
                    stored: g.settings().dimension,
                    configured: config.dimension,
                });
            }
            g
        } else {
            MemoryGraph::new(config.graph_settings())
        };
        let mut queue = ConsolidationQueue::open(&dir.join(QUEUE_FILE))?;
        recover_queue(&graph, &mut queue)?;
        Self::assemble(config, providers, graph, queue, Some(dir))
    }

    /// A store that lives only in memory.
    pub fn ephemeral(config: EngineConfig, providers: Providers) -> Result<Self, EngineError> {
        config.validate()?;
        let graph = MemoryGraph::new(config.graph_settings());
        Self::assemble(config, providers, graph, ConsolidationQueue::in_memory(), None)
    }

    fn assemble(
        config: EngineConfig,
        providers: Providers,
        graph: MemoryGraph,
        queue: ConsolidationQueue,
        store_dir: Option<PathBuf>,
    ) -> Result<Self, EngineError> {
        let indexes = IndexSet::build(graph.settings().dimension, graph.nodes())?;
        Ok(Engine {
            hash: config.hash(),
            config,
            providers,
            state: RwLock::new(State { graph, indexes }),
            queue: Mutex::new(queue),
            write_gate: Mutex::new(()),
            store_dir,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn store_dir(&self) -> Option<&Path> {
        self.store_dir.as_deref()
    }

    /// Runs `f` against a read snapshot of the store.
    pub fn read<T>(&self, f: impl FnOnce(&State) -> T) -> T {
        f(&self.state.read())
    }

    /// Fast path. The encoder runs before the store is locked for writing.
    pub fn ingest(&self, interaction: &Interaction) -> Result<Vec<NodeId>, EngineError> {
        let drafts = segment_event(interaction, self.config.segment_policy)?;
        let _gate = self.write_gate.lock();
        let embeddings = embed_drafts(self.providers.embedder.as_ref(), &drafts)?;
        let mut state = self.state.write();
        let State { graph, indexes } = &mut *state;
        let mut queue = self.queue.lock();
        Ok(insert_drafts(graph, indexes, &mut queue, drafts, embeddings)?)
    }

    fn slow_path(&self) -> Result<SlowPathProviders<'_>, EngineError> {
        let extractor = self.providers.extractor.as_deref().ok_or(ProviderError::NotConfigured { role: ProviderRole::Extractor })?;
        let reasoner = self.providers.reasoner.as_deref().ok_or(ProviderError::NotConfigured { role: ProviderRole::Reasoner })?;
        Ok(SlowPathProviders {
            extractor,
            extractor_cfg: &self.config.extractor,
            reasoner,
            reasoner_cfg: &self.config.reasoner,
        })
    }

    /// Consolidates one node. Provider calls happen outside every lock; each
    /// batch of writes goes through the write gate.
    pub fn consolidate_node(&self, id: NodeId) -> Result<ConsolidationReport, EngineError> {
        let providers = self.slow_path()?;
        let cfg = self.config.consolidation();
        let mut report = ConsolidationReport { node: id, ..Default::default() };
        let Some(job) = extraction_job(&self.state.read().graph, id)? else {
            report.skipped = true;
            return Ok(report);
        };
        let (attrs, calls) = run_extraction(&job, &providers)?;
        report.provider_calls += calls;
        {
            let _gate = self.write_gate.lock();
            let mut state = self.state.write();
            let State { graph, indexes } = &mut *state;
            if graph.node(id).is_some_and(|n| n.consolidated) {
                report.skipped = true;
                return Ok(report);
            }
            apply_extraction(graph, indexes, &cfg, id, attrs, &mut report)?;
        }
        let request = causal_request(&self.state.read().graph, &cfg, &self.config.reasoner, id);
        let causal = match request {
            Some((request, allowed)) => {
                let (pairs, calls) = run_reasoner(request, id, &providers)?;
                report.provider_calls += calls;
                Some((allowed, pairs))
            }
            None => None,
        };
        let _gate = self.write_gate.lock();
        let mut state = self.state.write();
        if let Some((allowed, pairs)) = causal {
            apply_causal(&mut state.graph, &cfg, id, &allowed, &pairs, &mut report)?;
        }
        state.graph.mark_consolidated(id)?;
        Ok(report)
    }

    /// Drains up to `max_items` queue items (all when `None`).
    pub fn consolidate(&self, max_items: Option<usize>) -> Result<WorkerSummary, EngineError> {
        self.slow_path()?;
        let mut summary = WorkerSummary::default();
        let mut taken = 0usize;
        while max_items.is_none_or(|m| taken < m) {
            let Some(id) = self.queue.lock().dequeue() else { break };
            taken += 1;
            if self.state.read().graph.node(id).is_none() {
                self.queue.lock().ack(id)?;
                continue;
            }
            match self.consolidate_node(id) {
                Ok(report) => {
                    self.queue.lock().ack(id)?;
                    summary.record(&report);
                }
                Err(EngineError::Consolidate(err @ ConsolidateError::Provider { .. })) => {
                    let outcome = self.queue.lock().fail(id)?;
                    tracing::warn!(node = %id, error = %err, "consolidation failed");
                    summary.record_failure(&err, outcome);
                }
                Err(other) => return Err(other),
            }
        }
        Ok(summary)
    }

    pub fn queue_len(&self) -> usize {
        self.queue.lock().len()
    }

    pub fn retrieve(&self, question: &str, now: Timestamp, cfg: &RetrievalConfig) -> Result<Retrieval, EngineError> {
        let state = self.state.read();
        Ok(retrieve(&state.graph, &state.indexes, self.providers.embedder.as_ref(), question, now, cfg)?)
    }

    /// Retrieval plus, when `answer` is set and an answerer is configured,
    /// answer synthesis. With `loop_write_back` the exchange is ingested.
    pub fn query(&self, question: &str, now: Timestamp, answer: bool) -> Result<QueryOutcome, EngineError> {
        self.query_with(question, now, &self.config.retrieval(), answer)
    }

    pub fn query_with(&self, question: &str, now: Timestamp, cfg: &RetrievalConfig, answer: bool) -> Result<QueryOutcome, EngineError> {
        let retrieval = self.retrieve(question, now, cfg)?;
        let mut outcome = QueryOutcome { retrieval, answer: None, answer_error: None, written_back: Vec::new() };
        let Some(answerer) = self.providers.answerer.as_deref().filter(|_| answer) else { return Ok(outcome) };
        let r = &outcome.retrieval;
        match synthesize_answer(answerer, &self.config.answerer, question, &r.context, r.plan.intent) {
            Ok(text) => outcome.answer = Some(text),
            Err(e) => outcome.answer_error = Some(e.to_string()),
        }
        if self.config.loop_write_back {
            if let Some(text) = outcome.answer.clone() {
                outcome.written_back = self.write_back(question, &text, now)?;
            }
        }
        Ok(outcome)
    }

    /// Appends a question/answer exchange to memory. The timestamp is raised
    /// to the backbone tail when `now` lies before it.
    pub fn write_back(&self, question: &str, answer: &str, now: Timestamp) -> Result<Vec<NodeId>, EngineError> {
        let tail = self.read(|s| s.graph.last_event_id().and_then(|id| s.graph.node(id)).map(|n| n.timestamp));
        let ts = tail.map_or(now, |t| t.max(now));
        let mut ids = Vec::new();
        for (speaker, text) in [("user", question), ("assistant", answer)] {
            let turn = Interaction {
                speaker: speaker.into(),
                text: text.into(),
                timestamp: ts,
                timestamp_text: ts.to_iso(),
                session: "feedback".into(),
            };
            ids.extend(self.ingest(&turn)?);
        }
        Ok(ids)
    }

    pub fn judge(&self, question: &str, gold: &str, candidate: &str) -> Result<Judgement, EngineError> {
        let j = self.providers.judge.as_deref().ok_or(ProviderError::NotConfigured { role: ProviderRole::Judge })?;
        Ok(judge(j, &self.config.judge, question, gold, candidate)?)
    }

    pub fn audit(&self) -> Vec<Violation> {
        self.state.read().graph.audit()
    }

    pub fn stats(&self) -> Stats {
        let state = self.state.read();
        let queue = self.queue.lock();
        let mut edges = BTreeMap::new();
        for t in EdgeType::ALL {
            edges.insert(t.as_str().to_string(), 0);
        }
        for e in state.graph.edges() {
            *edges.entry(e.edge_type.as_str().to_string()).or_insert(0) += 1;
        }
        Stats {
            events: state.graph.node_count(),
            entities: state.graph.entity_count(),
            edges,
            consolidated: state.graph.nodes().filter(|n| n.consolidated).count(),
            queue_len: queue.len(),
            enqueued: queue.enqueued_count(),
            dequeued: queue.dequeued_count(),
            failed: queue.failed().len(),
        }
    }

    /// Writes the graph file and compacts the queue journal. A no-op for
    /// ephemeral engines.
    pub fn save(&self) -> Result<(), EngineError> {
        let Some(dir) = &self.store_dir else { return Ok(()) };
        let _gate = self.write_gate.lock();
        graph::save(&self.state.read().graph, &dir.join(GRAPH_FILE))?;
        self.queue.lock().compact()?;
        Ok(())
    }
}

/// Brings the queue in line with the graph after a restart: ids of events
/// that no longer exist are dropped, and unconsolidated events that are
/// neither pending nor abandoned are enqueued again (the graph file may have
/// been saved before their consolidation was).
fn recover_queue(graph: &MemoryGraph, queue: &mut ConsolidationQueue) -> Result<(), QueueError> {
    queue.retain(|id| graph.node(id).is_some())?;
    let pending: BTreeSet<NodeId> = queue.pending().collect();
    let failed = queue.failed().clone();
    let orphans: Vec<NodeId> = graph
        .nodes()
        .filter(|n| !n.consolidated && !pending.contains(&n.id) && !failed.contains(&n.id))
        .map(|n| n.id)
        .collect();
    for id in orphans {
        queue.enqueue(id)?;
    }
    Ok(())
}
