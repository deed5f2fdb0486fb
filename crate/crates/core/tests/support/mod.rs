//! Shared fixtures and independent oracles for retrieval tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use strata_core::graph::{GraphSettings, MemoryGraph};
use strata_core::model::{AttributeSet, EdgeOrigin, EdgeType, EventNode, IntentLabel, NodeId, Timestamp, TypedEdge};
use strata_core::index::tokenize;
use strata_core::query::{estimate_tokens, render_block, AnchorConfig, Block, QueryPlan, TraversalPolicy};

pub const DIM: usize = 8;

pub fn plain_cos(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn event(id: u64, ts: i64, content: String, embedding: Vec<f32>) -> EventNode {
    EventNode {
        id: NodeId(id),
        content,
        timestamp: Timestamp(ts),
        timestamp_text: String::new(),
        embedding,
        attributes: AttributeSet::default(),
        episode_id: None,
        consolidated: false,
    }
}

pub const VOCAB: [&str; 12] = ["hike", "canyon", "violin", "rain", "class", "kids", "trip", "paint", "sunset", "work", "dog", "music"];

/// Random store: events with random words and embeddings, plus random
/// CAUSAL, SEMANTIC and ENTITY edges.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> MemoryGraph {
    let mut g = MemoryGraph::new(GraphSettings { dimension: DIM, ..Default::default() });
    let mut ts = 1_700_000_000i64;
    for _ in 0..n {
        ts += rng.gen_range(0..3) * 3600;
        let words: Vec<&str> = (0..rng.gen_range(1..4)).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect();
        let emb: Vec<f32> = (0..DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let id = g.allocate_id();
        g.add_event(event(id.0, ts, words.join(" "), emb)).unwrap();
    }
    let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
    for _ in 0..rng.gen_range(0..n * 2) {
        let a = ids[rng.gen_range(0..ids.len())];
        let b = ids[rng.gen_range(0..ids.len())];
        if a == b {
            continue;
        }
        let (src, dst) = if g.order_key(a) < g.order_key(b) { (a, b) } else { (b, a) };
        let t = if rng.gen_bool(0.5) { EdgeType::Causal } else { EdgeType::Semantic };
        let conf = rng.gen_range(0.2..=1.0);
        g.add_edge(TypedEdge::new(src, dst, t, conf, EdgeOrigin::Manual, Timestamp(0))).unwrap();
    }
    for name in ["ann", "bob", "cy"] {
        let members: Vec<NodeId> = ids.iter().copied().filter(|_| rng.gen_bool(0.15)).collect();
        if members.is_empty() {
            continue;
        }
        let e = g.upsert_entity(name).unwrap();
        for m in members {
            g.add_edge(TypedEdge::new(m, e, EdgeType::Entity, 1.0, EdgeOrigin::Manual, Timestamp(0))).unwrap();
        }
    }
    g
}

/// Undirected event-level adjacency rebuilt from the raw edge list, with
/// ENTITY edges expanded into event pairs sharing an entity.
pub fn oracle_adjacency(g: &MemoryGraph, allowed: &[EdgeType]) -> BTreeMap<NodeId, Vec<(NodeId, EdgeType)>> {
    let mut adj: BTreeMap<NodeId, Vec<(NodeId, EdgeType)>> = g.nodes().map(|n| (n.id, vec![])).collect();
    let mut members: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for e in g.edges() {
        if !allowed.contains(&e.edge_type) {
            continue;
        }
        if e.edge_type == EdgeType::Entity {
            members.entry(e.dst).or_default().push(e.src);
        } else {
            adj.get_mut(&e.src).unwrap().push((e.dst, e.edge_type));
            adj.get_mut(&e.dst).unwrap().push((e.src, e.edge_type));
        }
    }
    for list in members.values() {
        for &a in list {
            for &b in list {
                if a != b {
                    adj.get_mut(&a).unwrap().push((b, EdgeType::Entity));
                }
            }
        }
    }
    adj
}

/// Best score over every layered path (each step moves one BFS ring away
/// from the anchor set), enumerated path by path.
pub fn oracle_scores(
    g: &MemoryGraph,
    anchors: &[(NodeId, f64)],
    q: &[f32],
    intent: IntentLabel,
    policy: &TraversalPolicy,
) -> BTreeMap<NodeId, f64> {
    let allowed: Vec<EdgeType> = EdgeType::ALL.into_iter().filter(|t| !policy.excluded.contains(t)).collect();
    let adj = oracle_adjacency(g, &allowed);
    let mut dist: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut queue = VecDeque::new();
    for &(a, _) in anchors {
        dist.insert(a, 0);
        queue.push_back(a);
    }
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &adj[&u] {
            if !dist.contains_key(&v) {
                dist.insert(v, dist[&u] + 1);
                queue.push_back(v);
            }
        }
    }
    let weight = |t: EdgeType| {
        let w = policy.weights.for_intent(intent);
        match t {
            EdgeType::Temporal => w.temporal,
            EdgeType::Causal => w.causal,
            EdgeType::Semantic => w.semantic,
            EdgeType::Entity => w.entity,
        }
    };
    let mut best: BTreeMap<NodeId, f64> = BTreeMap::new();
    fn walk(
        u: NodeId,
        score: f64,
        adj: &BTreeMap<NodeId, Vec<(NodeId, EdgeType)>>,
        dist: &BTreeMap<NodeId, usize>,
        best: &mut BTreeMap<NodeId, f64>,
        step: &dyn Fn(NodeId, EdgeType) -> f64,
        gamma: f64,
    ) {
        let e = best.entry(u).or_insert(f64::NEG_INFINITY);
        if score > *e {
            *e = score;
        }
        for &(v, t) in &adj[&u] {
            if dist[&v] == dist[&u] + 1 {
                walk(v, score * gamma + step(v, t), adj, dist, best, step, gamma);
            }
        }
    }
    let step = |v: NodeId, t: EdgeType| (policy.lambda1 * weight(t) + policy.lambda2 * plain_cos(&g.node(v).unwrap().embedding, q)).exp();
    for &(a, s) in anchors {
        walk(a, s, &adj, &dist, &mut best, &step, policy.gamma);
    }
    // Anchors keep their seed even when another anchor reaches them.
    for &(a, s) in anchors {
        best.insert(a, s);
    }
    best
}

pub fn steering_fixture() -> MemoryGraph {
    // s(t=1) -> a(t=2) -> c(t=3) on the backbone; a→c CAUSAL, s–a SEMANTIC.
    let mut g = MemoryGraph::new(GraphSettings { dimension: 2, ..Default::default() });
    for (id, ts) in [(1, 1), (2, 2), (3, 3)] {
        g.add_event(event(id, ts, format!("n{id}"), vec![1.0, 0.0])).unwrap();
    }
    g.add_edge(TypedEdge::new(NodeId(2), NodeId(3), EdgeType::Causal, 0.9, EdgeOrigin::Manual, Timestamp(3))).unwrap();
    g.add_edge(TypedEdge::new(NodeId(1), NodeId(2), EdgeType::Semantic, 0.9, EdgeOrigin::Manual, Timestamp(2))).unwrap();
    g
}

pub fn random_blocks(rng: &mut ChaCha8Rng) -> Vec<Block> {
    let n = rng.gen_range(1..15);
    (0..n)
        .map(|i| {
            let ts = Timestamp(1_700_000_000 + i as i64 * 60);
            let text = "w".repeat(rng.gen_range(1..120));
            Block { id: NodeId(i + 1), timestamp: ts, text: render_block(NodeId(i + 1), ts, &text), salience: rng.gen_range(0.0..10.0), elided: false }
        })
        .collect()
}

/// Smallest possible rendering: the top block with every other block elided.
pub fn floor_tokens(blocks: &[Block]) -> usize {
    let top = blocks.iter().enumerate().max_by(|a, b| a.1.salience.total_cmp(&b.1.salience).then(b.0.cmp(&a.0))).unwrap().0;
    let mut lines = Vec::new();
    if top > 0 {
        lines.push(format!("...{top} intermediate events..."));
    }
    lines.push(blocks[top].text.clone());
    if top + 1 < blocks.len() {
        lines.push(format!("...{} intermediate events...", blocks.len() - top - 1));
    }
    estimate_tokens(&lines.join("\n"))
}

/// Anchors computed from scratch: brute-force cosine, tf-idf and window
/// rankings fused by direct evaluation of the RRF sum.
pub fn oracle_anchors(g: &MemoryGraph, plan: &QueryPlan, cfg: &AnchorConfig) -> Vec<(NodeId, f64)> {
    let (emb, keywords, window) = (&plan.embedding, &plan.keywords, plan.window);
    let mut vec_rank: Vec<(NodeId, f64)> = g.nodes().map(|n| (n.id, plain_cos(&n.embedding, emb))).filter(|x| x.1 > 0.0).collect();
    vec_rank.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    vec_rank.truncate(cfg.vector_top_k);
    let n_docs = g.node_count() as f64;
    let distinct: BTreeSet<&String> = keywords.iter().collect();
    let mut kw_rank: Vec<(NodeId, f64)> = g
        .nodes()
        .map(|n| {
            let toks = tokenize(&n.content);
            let s: f64 = distinct
                .iter()
                .map(|t| {
                    let tf = toks.iter().filter(|x| x == t).count() as f64;
                    let df = g.nodes().filter(|m| tokenize(&m.content).contains(t)).count() as f64;
                    if tf == 0.0 { 0.0 } else { tf * (1.0 + n_docs / df).ln() }
                })
                .sum();
            (n.id, s)
        })
        .filter(|x| x.1 > 0.0)
        .collect();
    kw_rank.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    kw_rank.truncate(cfg.keyword_top_k);
    let mut time_rank: Vec<(Timestamp, NodeId)> =
        g.nodes().filter(|n| window.is_some_and(|w| w.contains(n.timestamp))).map(|n| (n.timestamp, n.id)).collect();
    time_rank.sort();
    time_rank.reverse();

    let mut direct: BTreeMap<NodeId, f64> = BTreeMap::new();
    for (i, (id, _)) in vec_rank.iter().enumerate() {
        *direct.entry(*id).or_default() += cfg.vector_weight / (cfg.rrf_k + i as f64 + 1.0);
    }
    for (i, (id, _)) in kw_rank.iter().enumerate() {
        *direct.entry(*id).or_default() += cfg.keyword_weight / (cfg.rrf_k + i as f64 + 1.0);
    }
    for (i, (_, id)) in time_rank.iter().enumerate() {
        *direct.entry(*id).or_default() += cfg.time_weight / (cfg.rrf_k + i as f64 + 1.0);
    }
    let mut want: Vec<(NodeId, f64)> = direct.into_iter().collect();
    want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    want.truncate(cfg.anchor_top_k);
    want
}
