//! Lexical answer metrics. These use their own tokenizer (whitespace split
//! and lower-casing) rather than the index tokenizer, so punctuation stays
//! attached to words.

use std::collections::HashMap;

pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Multiset overlap between the two token bags.
fn overlap(gold: &[String], cand: &[String]) -> usize {
    let g = counts(gold);
    counts(cand).into_iter().map(|(t, n)| n.min(g.get(t).copied().unwrap_or(0))).sum()
}

/// Token-level F1. Zero when either side has no tokens.
pub fn token_f1(gold: &str, candidate: &str) -> f64 {
    let (g, c) = (metric_tokens(gold), metric_tokens(candidate));
    if g.is_empty() || c.is_empty() {
        return 0.0;
    }
    let common = overlap(&g, &c) as f64;
    if common == 0.0 {
        return 0.0;
    }
    let p = common / c.len() as f64;
    let r = common / g.len() as f64;
    2.0 * p * r / (p + r)
}

/// Clipped unigram precision times the brevity penalty.
pub fn bleu1(gold: &str, candidate: &str) -> f64 {
    let (g, c) = (metric_tokens(gold), metric_tokens(candidate));
    if g.is_empty() || c.is_empty() {
        return 0.0;
    }
    let precision = overlap(&g, &c) as f64 / c.len() as f64;
    let bp = if c.len() < g.len() { (1.0 - g.len() as f64 / c.len() as f64).exp() } else { 1.0 };
    precision * bp
}
