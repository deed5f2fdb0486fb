//! Operator surface for the memory engine: a command line and a JSON HTTP
//! service that share one set of verbs.

pub mod cli;
pub mod ops;
pub mod service;
