//! Randomized invariant checks over the public API.

use std::collections::BTreeSet;

use proptest::prelude::*;
use regad::confidence::select_confident_sets;
use regad::detector::ScoreVector;
use regad::graph::{build_graph, normalize_adjacency, prune_edges, EdgeSet};
use regad::metrics::{auc, aupr, inject_label_noise};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Scores plus labels with at least one member of each class.
fn scored_instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.0f64..1.0, n),
            proptest::collection::vec(0u8..2, n),
        )
            .prop_filter("need both classes", |(_, l)| {
                l.contains(&0) && l.contains(&1)
            })
    })
}

/// Random simple undirected graph as a sorted edge list on `n` nodes.
fn random_edges(n: usize) -> impl Strategy<Value = Vec<(u32, u32)>> {
    let all: Vec<(u32, u32)> = (0..n as u32)
        .flat_map(|i| (i + 1..n as u32).map(move |j| (i, j)))
        .collect();
    proptest::sample::subsequence(all.clone(), 1..=all.len())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// AUC and AUPR are probabilities, and flipping every label complements
    /// the tied-group AUC exactly.
    #[test]
    fn auc_bounds_and_complement((scores, labels) in scored_instance()) {
        let a = auc(&scores, &labels).unwrap();
        let p = aupr(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((0.0..=1.0).contains(&p));
        let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let b = auc(&scores, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    /// Confident sets are disjoint, have exactly `ceil(alpha n)` members
    /// each, and every anomaly-set score is >= every normal-set score.
    #[test]
    fn confident_sets_are_disjoint_extremes(
        scores in proptest::collection::vec(0.0f64..1.0, 8..80),
        alpha in 0.01f64..0.3,
    ) {
        let n = scores.len();
        let m = (alpha * n as f64).ceil() as usize;
        prop_assume!(2 * m <= n);
        let sv = ScoreVector { scores: scores.clone() };
        let sets = select_confident_sets(&sv, alpha).unwrap();
        prop_assert_eq!(sets.normal_set.len(), m);
        prop_assert_eq!(sets.anomaly_set.len(), m);
        prop_assert!(sets.normal_set.is_disjoint(&sets.anomaly_set));
        let top_min = sets
            .anomaly_set
            .iter()
            .map(|&v| scores[v as usize])
            .fold(f64::INFINITY, f64::min);
        let bottom_max = sets
            .normal_set
            .iter()
            .map(|&v| scores[v as usize])
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(bottom_max <= top_min);
    }

    /// The normalized adjacency is symmetric with row sums bounded by the
    /// augmented-degree identity (each entry positive only on A+I support).
    #[test]
    fn normalized_adjacency_is_symmetric(
        n in 2usize..16,
        seed in 0u64..256,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all: Vec<(u32, u32)> = (0..n as u32)
            .flat_map(|i| (i + 1..n as u32).map(move |j| (i, j)))
            .collect();
        let edges: Vec<(u32, u32)> = all
            .into_iter()
            .filter(|_| rand::Rng::random_bool(&mut rng, 0.4))
            .collect();
        prop_assume!(!edges.is_empty());
        let x = vec![0.0; n * 2];
        let g = build_graph(n, 2, &edges, x).unwrap();
        let dense = normalize_adjacency(&g).csr.to_dense();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((dense[i * n + j] - dense[j * n + i]).abs() < 1e-15);
            }
            prop_assert!(dense[i * n + i] > 0.0);
        }
    }

    /// Pruning removes exactly the cut set and nothing else.
    #[test]
    fn prune_is_exact_set_difference(
        edges in random_edges(12),
        pick in proptest::collection::vec(any::<prop::sample::Index>(), 1..6),
    ) {
        let g = build_graph(12, 2, &edges, vec![0.0; 24]).unwrap();
        let mut cut = EdgeSet::new();
        for idx in &pick {
            cut.insert(edges[idx.index(edges.len())]);
        }
        let pruned = prune_edges(&g, &cut).unwrap();
        let before: BTreeSet<(u32, u32)> = edges.iter().copied().collect();
        let removed: BTreeSet<(u32, u32)> = cut.iter().copied().collect();
        let after: BTreeSet<(u32, u32)> = pruned.edges().iter().copied().collect();
        let expect: BTreeSet<(u32, u32)> = before.difference(&removed).copied().collect();
        prop_assert_eq!(after, expect);
    }

    /// Observed labeled anomalies always number `budget`, of which
    /// `round(budget * (1 - ratio))` carry a true anomaly label underneath.
    #[test]
    fn noise_injection_counts_hold(
        ratio in 0.0f64..=1.0,
        budget in 1usize..12,
        seed in 0u64..256,
    ) {
        let n = 200;
        let clean: Vec<u8> = (0..n).map(|i| u8::from(i % 5 == 0)).collect();
        let pool: Vec<u32> = (0..n as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = inject_label_noise(&clean, &pool, budget, ratio, 10, &mut rng).unwrap();
        let labeled_anoms: Vec<u32> = table
            .labeled_nodes()
            .filter_map(|(v, anom)| anom.then_some(v))
            .collect();
        prop_assert_eq!(labeled_anoms.len(), budget);
        let truly: usize = labeled_anoms
            .iter()
            .filter(|&&v| clean[v as usize] == 1)
            .count();
        prop_assert_eq!(truly, (budget as f64 * (1.0 - ratio)).round() as usize);
    }
}
