use std::path::PathBuf;

use strata_core::provider::ProviderKind;
use strata_core::EngineConfig;
use strata_eval::dataset::{Category, UNANSWERABLE};
use strata_eval::run::{Aggregate, EvalError};
use strata_eval::{load_dataset, run_eval, Ablation, EvalOptions};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn options(ablation: Option<Ablation>) -> EvalOptions {
    EvalOptions { ablation, parallel: false }
}

#[test]
fn mini_report_is_complete_and_consistent() {
    let data = load_dataset(&fixture("mini.json")).unwrap();
    assert_eq!(data.question_count(), 10);
    let report = run_eval(&data, &EngineConfig::default(), &options(None)).unwrap();
    assert_eq!(report.variant, "full");
    assert_eq!(report.records.len(), 10);
    assert_eq!(report.builds[0].audit_violations, 0);
    assert_eq!(report.builds[0].consolidated, report.builds[0].events);
    assert!(report.records.iter().all(|r| r.error.is_none() && r.judge.is_some() && !r.intent.is_empty()));
    assert!(report.tokens.mean_context_tokens > 0.0 && report.tokens.mean_prompt_tokens > report.tokens.mean_context_tokens);
    assert_eq!(report.categories.len(), 5);

    // overall is recomputable from the shipped records, and equals the
    // count-weighted mean of the categories
    let again = Aggregate::of(&report.records);
    assert_eq!(again, report.overall);
    let weighted: f64 = report.categories.values().map(|a| a.f1_mean * a.count as f64).sum::<f64>() / report.overall.count as f64;
    assert!((weighted - report.overall.f1_mean).abs() < 1e-12);

    let table = report.render_table();
    assert!(table.contains("overall") && table.contains("adversarial"));
}

#[test]
fn adversarial_items_get_an_honest_refusal() {
    let data = load_dataset(&fixture("mini.json")).unwrap();
    let report = run_eval(&data, &EngineConfig::default(), &options(None)).unwrap();
    let adversarial: Vec<_> = report.records.iter().filter(|r| r.category == Category::Adversarial).collect();
    assert_eq!(adversarial.len(), 2);
    for r in adversarial {
        assert_eq!(r.gold, UNANSWERABLE);
        assert_eq!(r.answer, "Information not found");
        assert_eq!(r.judge, Some(1.0));
    }
}

#[test]
fn answer_path_never_reads_category_labels() {
    let data = load_dataset(&fixture("mini.json")).unwrap();
    let samples: Vec<_> = data.conversations.iter().flat_map(|c| &c.questions).collect();
    assert!(samples.iter().all(|q| q.category_reads() == 0));
    run_eval(&data, &EngineConfig::default(), &options(None)).unwrap();
    // exactly one read each, by the aggregation step
    assert!(samples.iter().all(|q| q.category_reads() == 1));
}

#[test]
fn two_runs_hash_identically() {
    let data = load_dataset(&fixture("mini.json")).unwrap();
    let a = run_eval(&data, &EngineConfig::default(), &options(None)).unwrap();
    let b = run_eval(&data, &EngineConfig::default(), &EvalOptions { ablation: None, parallel: true }).unwrap();
    assert_eq!(a.report_hash, b.report_hash);
    assert_eq!(a.deterministic_json().to_string(), b.deterministic_json().to_string());
}

#[test]
fn no_causal_variant_walks_no_causal_edges() {
    let data = load_dataset(&fixture("mini.json")).unwrap();
    let full = run_eval(&data, &EngineConfig::default(), &options(None)).unwrap();
    assert!(full.builds[0].edges.get("CAUSAL").copied().unwrap_or(0) > 0);
    assert!(full.records.iter().any(|r| r.edge_types.get("CAUSAL").copied().unwrap_or(0) > 0));

    let ablated = run_eval(&data, &EngineConfig::default(), &options(Some(Ablation::NoCausal))).unwrap();
    assert_eq!(ablated.variant, "no-causal");
    assert!(ablated.records.iter().all(|r| r.edge_types.get("CAUSAL").copied().unwrap_or(0) == 0));
    assert_ne!(ablated.report_hash, full.report_hash);
}

#[test]
fn no_adaptive_variant_is_labelled() {
    let data = load_dataset(&fixture("mini.json")).unwrap();
    let report = run_eval(&data, &EngineConfig::default(), &options(Some(Ablation::NoAdaptive))).unwrap();
    assert_eq!(report.variant, "no-adaptive");
    assert!(report.variant_note.contains("uniform"));
    assert!(report.render_table().contains("uniform"));
}

#[test]
fn loop_flag_writes_exchanges_back() {
    let data = load_dataset(&fixture("mini.json")).unwrap();
    let cfg = EngineConfig { loop_write_back: true, ..Default::default() };
    let report = run_eval(&data, &cfg, &options(None)).unwrap();
    assert!(report.loop_write_back);
    assert!(report.records.iter().all(|r| r.written_back == 2));
}

#[test]
fn disabled_answerer_aborts_before_ingestion() {
    let data = load_dataset(&fixture("mini.json")).unwrap();
    let mut cfg = EngineConfig::default();
    cfg.answerer.kind = ProviderKind::Disabled;
    assert!(matches!(run_eval(&data, &cfg, &options(None)), Err(EvalError::MissingProvider { role: "answerer" })));
}
