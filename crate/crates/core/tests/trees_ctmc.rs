mod common;

use colexphylo::ctmc::{simulate_history, transition_matrix, RateParams, RootState};
use colexphylo::trees::{parse_newick, simulate_coalescent, PhyloTree};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rp(s: f64, p: f64) -> RateParams<f64> {
    RateParams::new(s, p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn newick_round_trip(n in 2usize..40, seed in any::<u64>()) {
        let tree = simulate_coalescent(n, seed).unwrap();
        let back: PhyloTree<f64> = parse_newick(&tree.to_newick()).unwrap();
        prop_assert!(back.structurally_equal(&tree, 1e-12));
    }

    #[test]
    fn newick_round_trip_polytomies(n in 2usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = common::random_tree(&mut rng, n, true);
        let back: PhyloTree<f64> = parse_newick(&tree.to_newick()).unwrap();
        prop_assert!(back.structurally_equal(&tree, 1e-12));
    }

    #[test]
    fn prune_preserves_distances(n in 3usize..25, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = common::random_tree(&mut rng, n, true);
        let labels = tree.tip_labels();
        let keep: Vec<String> = labels.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
        prop_assume!(keep.len() >= 2);
        let pruned = tree.prune_to_taxa(&keep).unwrap();
        prop_assert_eq!(pruned.n_tips(), keep.len());
        for a in &keep {
            for b in &keep {
                let d0 = tree.tip_distance(a, b).unwrap();
                let d1 = pruned.tip_distance(a, b).unwrap();
                prop_assert!((d0 - d1).abs() < 1e-12, "{a}-{b}: {d0} vs {d1}");
            }
        }
    }

    #[test]
    fn graft_preserves_distances(n in 2usize..25, seed in any::<u64>(), frac in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = common::random_tree(&mut rng, n, true);
        let labels = tree.tip_labels();
        let sibling = &labels[rng.random_range(0..labels.len())];
        let grafted = tree.graft_taxon("new", sibling, frac).unwrap();
        prop_assert_eq!(grafted.n_tips(), tree.n_tips() + 1);
        for (pair, d) in tree.pairwise_distances() {
            let d1 = grafted.tip_distance(&pair.0, &pair.1).unwrap();
            prop_assert!((d - d1).abs() < 1e-12);
        }
        let depths = grafted.tip_depths();
        prop_assert!((depths["new"] - depths[sibling.as_str()]).abs() < 1e-12);
        let back = grafted.prune_to_taxa(&labels).unwrap();
        prop_assert!(back.structurally_equal(&tree, 1e-12));
    }

    #[test]
    fn coalescent_is_ultrametric(n in 2usize..120, seed in any::<u64>()) {
        let tree = simulate_coalescent(n, seed).unwrap();
        prop_assert_eq!(tree.n_tips(), n);
        prop_assert_eq!(tree.n_internal(), n - 1);
        prop_assert!(tree.ultrametric_spread() < 1e-9);
    }

    #[test]
    fn transition_rows_and_oracle(s in 0.01f64..50.0, p in 0.01f64..0.99, t in 0.0f64..100.0) {
        let m = transition_matrix(rp(s, p), t).unwrap();
        let o = common::transition_oracle(s, p, t);
        for i in 0..2 {
            prop_assert!((m[i][0] + m[i][1] - 1.0).abs() < 1e-12);
            for j in 0..2 {
                prop_assert!((m[i][j] - o[i][j]).abs() < 1e-10, "({i},{j}) {} vs {}", m[i][j], o[i][j]);
            }
        }
    }

    #[test]
    fn chapman_kolmogorov(s in 0.01f64..50.0, p in 0.01f64..0.99, t1 in 0.0f64..10.0, t2 in 0.0f64..10.0) {
        let a = transition_matrix(rp(s, p), t1).unwrap();
        let b = transition_matrix(rp(s, p), t2).unwrap();
        let ab = transition_matrix(rp(s, p), t1 + t2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let prod = a[i][0] * b[0][j] + a[i][1] * b[1][j];
                prop_assert!((prod - ab[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stationarity(s in 0.01f64..50.0, p in 0.01f64..0.99, t in 0.0f64..100.0) {
        let m = transition_matrix(rp(s, p), t).unwrap();
        let pi = [1.0 - p, p];
        for j in 0..2 {
            let v = pi[0] * m[0][j] + pi[1] * m[1][j];
            prop_assert!((v - pi[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn time_rescaling(s in 0.01f64..50.0, p in 0.01f64..0.99, t in 0.0f64..20.0, c in 0.01f64..100.0) {
        let a = transition_matrix(rp(s, p), t).unwrap();
        let b = transition_matrix(rp(s / c, p), c * t).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((a[i][j] - b[i][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn expm_oracle_known_value() {
    let m = common::transition_oracle(1.0, 0.5, std::f64::consts::LN_2);
    assert!((m[1][1] - 0.75).abs() < 1e-14);
    let closed = transition_matrix(rp(1.0, 0.5), std::f64::consts::LN_2).unwrap();
    assert!((closed[1][1] - 0.75).abs() < 1e-14);
}

#[test]
fn coalescent_two_taxa_mean_height() {
    let mean: f64 = (0..1000).map(|seed| simulate_coalescent(2, seed).unwrap().height()).sum::<f64>() / 1000.0;
    assert!((mean - 1.0).abs() < 0.1, "mean height {mean}");
}

#[test]
fn long_branches_reach_stationarity() {
    let tree: PhyloTree<f64> = parse_newick("(A:50.0,B:50.0);").unwrap();
    let p = 0.3;
    let mut ones = 0usize;
    for seed in 0..10_000u64 {
        let tips = simulate_history(&tree, rp(1.0, p), RootState::Zero, seed).unwrap();
        ones += tips.values().map(|&v| v as usize).sum::<usize>();
    }
    let frac = ones as f64 / 20_000.0;
    assert!((frac - p).abs() < 0.02, "fraction {frac}");
}

#[test]
fn frozen_chain_copies_root() {
    let tree = simulate_coalescent(20, 3).unwrap();
    for (root, bit) in [(RootState::Zero, 0u8), (RootState::One, 1u8)] {
        let tips = simulate_history(&tree, rp(1e-12, 0.5), root, 11).unwrap();
        assert!(tips.values().all(|&v| v == bit));
    }
}
