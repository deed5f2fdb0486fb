//! Evaluation harness: QA datasets, lexical metrics, and end-to-end runs
//! that produce a JSON report plus a plain-text table.

pub mod dataset;
pub mod metrics;
pub mod run;

pub use dataset::{load_dataset, Category, Dataset, QASample};
pub use metrics::{bleu1, token_f1};
pub use run::{run_eval, Ablation, EvalError, EvalOptions, RunReport};
