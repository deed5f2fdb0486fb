use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn strata(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strata"))
        .arg("--store")
        .arg(store)
        .args(args)
        .env_remove("STRATA_STORE_PATH")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn roadtrip_session_replays_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = strata(&store, &["ingest", fixture("roadtrip.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("19 events"));

    let out = strata(&store, &["consolidate", "--max-items", "5"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("processed 5"));
    let out = strata(&store, &["consolidate"]);
    assert!(stdout(&out).contains("queue 0"));

    let out = strata(&store, &["query", "When did she hike after the roadtrip?", "--now", "2023-10-20"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("2023-10-19"));

    let out = strata(&store, &["query", "What did Melanie do yesterday?", "--now", "2023-10-20", "--json", "--no-answer"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["window"]["start"], "2023-10-19T00:00:00Z");
    assert!(v["context"].as_str().unwrap().contains("<t:2023-10-19"));
    assert!(v["answer"].is_null());

    let out = strata(&store, &["audit"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("0 violations"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    assert_eq!(strata(&store, &["--bogus"]).status.code(), Some(2));
    assert_eq!(strata(&store, &["query", "x", "--now", "someday"]).status.code(), Some(2));
    assert_eq!(strata(&store, &["--set", "gamma=7", "audit"]).status.code(), Some(2));
    assert_eq!(strata(&store, &["eval", "x.json", "--ablate", "no-everything"]).status.code(), Some(2));
    // no memory yet
    assert_eq!(strata(&store, &["query", "anything"]).status.code(), Some(3));

    std::fs::create_dir_all(&store).unwrap();
    std::fs::write(store.join("graph.jsonl"), "{ broken").unwrap();
    assert_eq!(strata(&store, &["audit"]).status.code(), Some(3));
}

#[test]
fn audit_violations_exit_five() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    strata(&store, &["ingest", fixture("roadtrip.json").to_str().unwrap()]);
    // Break the backbone by hand: drop one TEMPORAL edge line and keep the
    // header count consistent so the file still loads.
    let path = store.join("graph.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let count = |t: &str| t.lines().filter(|l| l.contains("\"kind\":\"edge\"")).count();
    let n = count(&text);
    let text = text.replacen(&format!("\"edge_count\":{n}"), &format!("\"edge_count\":{}", n - 1), 1);
    let mut dropped = false;
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| {
            if !dropped && l.contains("\"TEMPORAL\"") {
                dropped = true;
                return false;
            }
            true
        })
        .collect();
    assert!(dropped);
    std::fs::write(&path, kept.join("\n") + "\n").unwrap();
    let out = strata(&store, &["audit"]);
    assert_eq!(out.status.code(), Some(5), "{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    assert!(!stdout(&out).starts_with("0 violations"));
}

#[test]
fn provider_outage_exits_four_but_prints_context() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    strata(&store, &["ingest", fixture("roadtrip.json").to_str().unwrap()]);
    let out = strata(
        &store,
        &["--set", "answerer.kind=http", "--set", "answerer.endpoint=http://127.0.0.1:9/chat", "--set", "answerer.max_retries=0", "query", "Why was the pottery class cancelled?"],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(stdout(&out).contains("<ref:"));
    assert!(stdout(&out).contains("answer error"));
}

#[test]
fn config_precedence_flag_over_env_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("strata.toml");
    std::fs::write(&file, "gamma = 0.5\nbeam_width = 3\nanchor_top_k = 4\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_strata"))
        .args(["--config", file.to_str().unwrap(), "--set", "gamma=0.6", "config"])
        .env("STRATA_GAMMA", "0.9")
        .env("STRATA_BEAM_WIDTH", "7")
        .output()
        .unwrap();
    let text = stdout(&out);
    assert!(text.contains("gamma = 0.6"), "{text}");
    assert!(text.contains("beam_width = 7"));
    assert!(text.contains("anchor_top_k = 4"));
    assert!(text.starts_with("# config_hash = "));
}

#[test]
fn eval_writes_report_and_labels_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = strata(
        &dir.path().join("unused"),
        &["eval", fixture("mini.json").to_str().unwrap(), "--ablate", "no-adaptive", "--out", report.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("uniform edge-type weights"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["variant"], "no-adaptive");
    assert_eq!(v["records"].as_array().unwrap().len(), 10);
    assert!(dir.path().join("report.txt").exists());
}
