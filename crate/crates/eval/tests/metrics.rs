use proptest::prelude::*;
use strata_eval::metrics::{bleu1, metric_tokens, token_f1};

// (gold, candidate, f1, bleu-1) from the published worked examples.
const CASES: [(&str, &str, f64, f64); 4] = [
    ("three items", "five items", 0.500, 0.500),
    ("18 days", "The total duration was 18 days", 0.500, 0.333),
    ("compatible with Mac", "not compatible with Mac", 0.857, 0.750),
    ("John completed the project", "Sarah completed the project", 0.750, 0.750),
];

#[test]
fn worked_examples_reproduce() {
    for (gold, cand, f1, b1) in CASES {
        assert!((token_f1(gold, cand) - f1).abs() <= 1e-3, "f1 {gold:?} / {cand:?} = {}", token_f1(gold, cand));
        assert!((bleu1(gold, cand) - b1).abs() <= 1e-3, "bleu1 {gold:?} / {cand:?} = {}", bleu1(gold, cand));
    }
}

/// Reference implementation working on sorted token lists.
fn oracle_overlap(gold: &str, cand: &str) -> usize {
    let mut g = metric_tokens(gold);
    let mut common = 0;
    for t in metric_tokens(cand) {
        if let Some(i) = g.iter().position(|x| *x == t) {
            g.swap_remove(i);
            common += 1;
        }
    }
    common
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "B", "b", "cat", "Cat.", "dog", "18", "days"]), 0..8).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_range_and_match_oracle(gold in words(), cand in words()) {
        let f = token_f1(&gold, &cand);
        let b = bleu1(&gold, &cand);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((0.0..=1.0).contains(&b));
        let (ng, nc) = (metric_tokens(&gold).len(), metric_tokens(&cand).len());
        if ng > 0 && nc > 0 {
            let common = oracle_overlap(&gold, &cand) as f64;
            let want = if common == 0.0 { 0.0 } else { 2.0 * common / (ng + nc) as f64 };
            prop_assert!((f - want).abs() < 1e-12);
            let bp = if nc < ng { (1.0 - ng as f64 / nc as f64).exp() } else { 1.0 };
            prop_assert!((b - common / nc as f64 * bp).abs() < 1e-12);
        }
        prop_assert!((token_f1(&gold, &cand) - token_f1(&cand, &gold)).abs() < 1e-12);
    }
}
