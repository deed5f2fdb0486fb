//! Multi-view event memory: a typed multigraph with temporal, causal,
//! semantic and entity edges, a fast ingestion path, background
//! consolidation and intent-guided retrieval.

pub mod config;
pub mod consolidate;
pub mod engine;
pub mod graph;
pub mod index;
pub mod ingest;
pub mod model;
pub mod provider;
pub mod query;
pub mod queue;
pub mod transcript;

pub use config::EngineConfig;
pub use engine::{Engine, EngineError, Providers, QueryOutcome};
