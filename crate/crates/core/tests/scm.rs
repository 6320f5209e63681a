use std::collections::BTreeMap;

use cdbench_core::presets;
use cdbench_core::scm::{
    check_constraints, enumerate_valid_assignments, product_indices, sample_assignment, CausalGraphSpec,
    ConstraintRule, FactorSpec, Predicate,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn toy_sampling_is_uniform_over_the_diagonal() {
    let graph = presets::toy_graph();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let draws = 10_000;
    for _ in 0..draws {
        let a = sample_assignment(&graph, &mut rng).unwrap();
        *counts.entry(a.get("shape").unwrap().to_string()).or_default() += 1;
    }
    assert_eq!(counts.len(), 3);
    let expected = draws as f64 / 3.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9% quantile of χ² with 2 degrees of freedom
    assert!(chi2 < 13.82, "χ² = {chi2}, counts {counts:?}");
    for &c in counts.values() {
        assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.05 / 3.0);
    }
}

#[test]
fn candle_sampling_matches_enumeration() {
    let graph = presets::candle_lite_graph();
    let valid = enumerate_valid_assignments(&graph, 10_000_000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut scenes: BTreeMap<String, usize> = BTreeMap::new();
    let draws = 20_000;
    for _ in 0..draws {
        let a = sample_assignment(&graph, &mut rng).unwrap();
        assert!(check_constraints(&a, &graph).unwrap());
        *scenes.entry(a.get("scene").unwrap().to_string()).or_default() += 1;
    }
    let mut expected: BTreeMap<String, usize> = BTreeMap::new();
    for a in &valid {
        *expected.entry(a.get("scene").unwrap().to_string()).or_default() += 1;
    }
    let mut chi2 = 0.0;
    for (scene, &n) in &expected {
        let e = draws as f64 * n as f64 / valid.len() as f64;
        chi2 += (scenes.get(scene).copied().unwrap_or(0) as f64 - e).powi(2) / e;
    }
    // 99.9% quantile of χ² with 15 degrees of freedom
    assert!(chi2 < 37.70, "χ² = {chi2}");
}

#[test]
fn candle_count_matches_brute_force() {
    let graph = presets::candle_lite_graph();
    let valid = enumerate_valid_assignments(&graph, 10_000_000).unwrap();
    let cards = graph.cardinalities();
    assert_eq!(cards, vec![3, 16, 5, 3, 5, 6]);
    let mut count = 0;
    for idx in product_indices(&cards) {
        let forbidden = graph.observed_rules.iter().any(|rule| {
            rule.forbidden.iter().all(|p| {
                let f = graph.factor_index(&p.factor).unwrap();
                p.values.contains(&graph.factors[f].values[idx[f]])
            })
        });
        if !forbidden {
            count += 1;
        }
    }
    assert_eq!(valid.len(), count);
    assert!(count < 3 * 16 * 5 * 3 * 5 * 6);
    assert!(graph.observed_rules.len() >= 5);
}

fn small_graph() -> impl Strategy<Value = CausalGraphSpec> {
    let cards = prop::collection::vec(2usize..4, 2..4);
    (cards, any::<u64>(), prop::collection::vec(any::<u64>(), 0..3)).prop_map(|(cards, seed, rule_bits)| {
        let factors: Vec<FactorSpec> = cards
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let values: Vec<String> = (0..k).map(|v| format!("v{v}")).collect();
                let refs: Vec<&str> = values.iter().map(String::as_str).collect();
                FactorSpec::new(&format!("f{i}"), &refs)
            })
            .collect();
        let observed_rules = rule_bits
            .iter()
            .map(|bits| {
                let preds = (0..2)
                    .map(|j| {
                        let f = (*bits as usize >> (8 * j)) % cards.len();
                        let f = if j == 1 && f == (*bits as usize) % cards.len() { (f + 1) % cards.len() } else { f };
                        let v = (*bits >> (16 + 4 * j)) as usize % cards[f];
                        Predicate::new(&format!("f{f}"), &[&format!("v{v}")])
                    })
                    .collect();
                ConstraintRule::new(preds, "generated")
            })
            .collect();
        CausalGraphSpec {
            factors,
            observed_rules,
            nuisance: vec![],
            seed,
        }
    })
}

proptest! {
    #[test]
    fn enumeration_equals_filtered_product(graph in small_graph()) {
        let valid = enumerate_valid_assignments(&graph, 1_000).unwrap();
        let mut brute = Vec::new();
        for idx in product_indices(&graph.cardinalities()) {
            let a = graph.assignment_from_indices(&idx, 0);
            if check_constraints(&a, &graph).unwrap() {
                brute.push(a.values);
            }
        }
        let got: Vec<_> = valid.iter().map(|a| a.values.clone()).collect();
        prop_assert_eq!(got, brute);
        prop_assert_eq!(&valid, &enumerate_valid_assignments(&graph, 1_000).unwrap());
    }

    #[test]
    fn samples_are_valid_and_reproducible(graph in small_graph(), seed in any::<u64>()) {
        let any_valid = !enumerate_valid_assignments(&graph, 1_000).unwrap().is_empty();
        let a = sample_assignment(&graph, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = sample_assignment(&graph, &mut ChaCha8Rng::seed_from_u64(seed));
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert!(any_valid);
                prop_assert!(check_constraints(&a, &graph).unwrap());
                prop_assert_eq!(a, b);
            }
            (Err(_), Err(_)) => prop_assert!(!any_valid),
            _ => prop_assert!(false, "non-deterministic sampling"),
        }
    }
}
