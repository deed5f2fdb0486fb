use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strata_core::graph::{self, GraphSettings, MemoryGraph};
use strata_core::index::{tokenize, IndexSet};
use strata_core::model::{AttributeSet, EdgeOrigin, EdgeType, EventNode, NodeId, Timestamp, TypedEdge};

const WORDS: [&str; 12] = ["river", "piano", "garden", "storm", "lunch", "trip", "novel", "paint", "Bob", "Ann", "dog", "run"];

fn random_store(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> MemoryGraph {
    let mut g = MemoryGraph::new(GraphSettings { dimension: dim, theta_sim: 0.2, clamp_out_of_order: false });
    let mut ts = 1_600_000_000;
    for _ in 0..n {
        ts += rng.gen_range(0..5000);
        let id = g.allocate_id();
        let content: Vec<&str> = (0..rng.gen_range(1..8)).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
        let node = EventNode {
            id,
            content: content.join(" "),
            timestamp: Timestamp(ts),
            timestamp_text: String::new(),
            embedding: (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            attributes: AttributeSet { topic: WORDS[rng.gen_range(0..WORDS.len())].to_lowercase(), ..Default::default() },
            episode_id: Some(format!("s{}", id.0 / 50)),
            consolidated: rng.gen_bool(0.5),
        };
        g.add_event(node).unwrap();
    }
    let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
    for name in ["Ann", "Bob", "Cy"] {
        let e = g.upsert_entity(name).unwrap();
        for _ in 0..n / 10 {
            let ev = ids[rng.gen_range(0..ids.len())];
            g.add_edge(TypedEdge::new(ev, e, EdgeType::Entity, 1.0, EdgeOrigin::Consolidation, Timestamp(0))).unwrap();
        }
    }
    for _ in 0..n {
        let (a, b) = (ids[rng.gen_range(0..ids.len())], ids[rng.gen_range(0..ids.len())]);
        if a == b {
            continue;
        }
        let (src, dst) = if g.order_key(a) < g.order_key(b) { (a, b) } else { (b, a) };
        let conf = (rng.gen_range(0.5..1.0f64) * 1000.0).round() / 1000.0;
        let t = if rng.gen_bool(0.5) { EdgeType::Causal } else { EdgeType::Semantic };
        g.add_edge(TypedEdge::new(src, dst, t, conf, EdgeOrigin::Consolidation, Timestamp(1))).unwrap();
    }
    g
}

#[test]
fn thousand_node_store_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = random_store(&mut rng, 1000, 16);
    assert!(g.audit().is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.jsonl");
    graph::save(&g, &path).unwrap();
    let back = graph::load(&path).unwrap();
    assert!(back.audit().is_empty());
    assert_eq!(back.node_count(), 1000);
    assert_eq!(back.entity_count(), 3);
    assert!(g.nodes().eq(back.nodes()));
    assert!(g.entities().eq(back.entities()));
    assert_eq!(g.edges(), back.edges());
    assert_eq!(g.next_id(), back.next_id());
    assert_eq!(g.settings(), back.settings());

    let mut first = Vec::new();
    graph::write_to(&g, &mut first).unwrap();
    let mut second = Vec::new();
    graph::write_to(&back, &mut second).unwrap();
    assert_eq!(first, second);
}

#[test]
fn truncated_file_is_a_parse_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_store(&mut rng, 20, 4);
    let mut buf = Vec::new();
    graph::write_to(&g, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let cut = &text[..text.len() - 10];
    assert!(graph::parse(cut).is_err());
}

fn brute_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) }
}

fn ranked(mut v: Vec<(NodeId, f64)>, k: usize) -> Vec<NodeId> {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|p| p.0).collect()
}

#[test]
fn indexes_agree_with_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..30 {
        let g = random_store(&mut rng, 60 + trial, 8);
        let idx = IndexSet::build(8, g.nodes()).unwrap();

        let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let k = rng.gen_range(1..15);
        let want = ranked(g.nodes().map(|n| (n.id, brute_cosine(&q, &n.embedding))).collect(), k);
        let got: Vec<NodeId> = idx.vectors.search(&q, k).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(got, want);

        let kw: Vec<String> = (0..2).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect();
        let terms: BTreeSet<String> = kw.iter().flat_map(|w| tokenize(w)).collect();
        let docs: Vec<(NodeId, Vec<String>)> = g
            .nodes()
            .map(|n| (n.id, std::iter::once(n.content.as_str()).chain(n.attributes.text_fields()).flat_map(tokenize).collect()))
            .collect();
        let n = docs.len() as f64;
        let scored: Vec<(NodeId, f64)> = docs
            .iter()
            .map(|(id, toks)| {
                let s: f64 = terms
                    .iter()
                    .map(|t| {
                        let tf = toks.iter().filter(|x| *x == t).count() as f64;
                        let df = docs.iter().filter(|(_, d)| d.contains(t)).count() as f64;
                        if df == 0.0 { 0.0 } else { tf * (1.0 + n / df).ln() }
                    })
                    .sum();
                (*id, s)
            })
            .filter(|(_, s)| *s > 0.0)
            .collect();
        let want = ranked(scored, k);
        let got: Vec<NodeId> = idx.keywords.search(&kw, k).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(got, want);

        let all: Vec<&EventNode> = g.nodes().collect();
        let (a, b) = (rng.gen_range(0..all.len()), rng.gen_range(0..all.len()));
        let (lo, hi) = (all[a.min(b)].timestamp, all[a.max(b)].timestamp);
        let mut want: Vec<(Timestamp, NodeId)> = all.iter().filter(|n| n.timestamp >= lo && n.timestamp <= hi).map(|n| (n.timestamp, n.id)).collect();
        want.sort();
        let want: Vec<NodeId> = want.into_iter().map(|p| p.1).collect();
        assert_eq!(idx.times.filter(lo, hi).unwrap(), want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_store_passes_audit_and_reloads(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_store(&mut rng, n, 4);
        prop_assert!(g.audit().is_empty());
        let temporal = g.edges().iter().filter(|e| e.edge_type == EdgeType::Temporal).count();
        prop_assert_eq!(temporal, n - 1);
        let mut buf = Vec::new();
        graph::write_to(&g, &mut buf).unwrap();
        let back = graph::parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.edges(), g.edges());
    }
}
