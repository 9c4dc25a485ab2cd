mod common;

use colexphylo::ctmc::RateParams;
use colexphylo::likelihood::{log_likelihood, log_likelihood_grad, PruningTree, TipStates, TraitState};
use colexphylo::model::{
    link_params, log_posterior_grad, pointwise_loglik, CoefficientSet, Component, FamilyData, ModelSpec, Posterior,
    Variant,
};
use colexphylo::trees::{parse_newick, simulate_coalescent, PhyloTree};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rp(s: f64, p: f64) -> RateParams<f64> {
    RateParams::new(s, p).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn flip(tips: &TipStates) -> TipStates {
    let mut out = TipStates::new(tips.character.clone());
    for (k, v) in &tips.states {
        out = out.with(k, v.flipped());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn pruning_matches_enumeration(n in 2usize..=5, seed in any::<u64>(), s in 0.01f64..10.0, p in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = common::random_tree(&mut rng, n, true);
        let tips = common::random_tips(&mut rng, &tree, 0.25);
        let ll = log_likelihood(&tree, &tips, rp(s, p)).unwrap();
        let oracle = common::brute_force_loglik(&tree, &tips.states, s, p);
        prop_assert!((ll - oracle).abs() < 1e-12, "{ll} vs {oracle}");
    }

    #[test]
    fn branch_length_speed_exchange(n in 2usize..40, seed in any::<u64>(), s in 0.01f64..10.0, p in 0.01f64..0.99, c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = common::random_tree(&mut rng, n, true);
        let tips = common::random_tips(&mut rng, &tree, 0.2);
        let a = log_likelihood(&tree, &tips, rp(s, p)).unwrap();
        let b = log_likelihood(&tree.scaled(c), &tips, rp(s / c, p)).unwrap();
        prop_assert!(close(a, b, 1e-12), "{a} vs {b}");
    }

    #[test]
    fn state_relabel_symmetry(n in 2usize..40, seed in any::<u64>(), s in 0.01f64..10.0, p in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = common::random_tree(&mut rng, n, true);
        let tips = common::random_tips(&mut rng, &tree, 0.2);
        let a = log_likelihood(&tree, &tips, rp(s, p)).unwrap();
        let b = log_likelihood(&tree, &flip(&tips), rp(s, 1.0 - p)).unwrap();
        prop_assert!(close(a, b, 1e-12), "{a} vs {b}");
    }

    #[test]
    fn child_order_invariance(n in 2usize..40, seed in any::<u64>(), s in 0.01f64..10.0, p in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = common::random_tree(&mut rng, n, true);
        let tips = common::random_tips(&mut rng, &tree, 0.2);
        let a = log_likelihood(&tree, &tips, rp(s, p)).unwrap();
        let b = log_likelihood(&tree.permute_children(&mut rng), &tips, rp(s, p)).unwrap();
        prop_assert!(close(a, b, 1e-12), "{a} vs {b}");
    }

    #[test]
    fn missing_tip_graft_invariance(n in 2usize..40, seed in any::<u64>(), s in 0.01f64..10.0, p in 0.01f64..0.99, frac in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = common::random_tree(&mut rng, n, true);
        let tips = common::random_tips(&mut rng, &tree, 0.2);
        let labels = tree.tip_labels();
        let grafted = tree.graft_taxon("extra", &labels[rng.random_range(0..labels.len())], frac).unwrap();
        let a = log_likelihood(&tree, &tips, rp(s, p)).unwrap();
        let b = log_likelihood(&grafted, &tips.clone().with("extra", TraitState::Missing), rp(s, p)).unwrap();
        prop_assert!(close(a, b, 1e-12), "{a} vs {b}");
    }

    #[test]
    fn likelihood_gradient_matches_differences(n in 2usize..20, seed in any::<u64>(), s in 0.05f64..5.0, p in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = common::random_tree(&mut rng, n, true);
        let tips = common::random_tips(&mut rng, &tree, 0.2);
        let g = log_likelihood_grad(&tree, &tips, rp(s, p)).unwrap();
        let fd = common::finite_diff(|v| log_likelihood(&tree, &tips, rp(v[0], v[1])).unwrap(), &[s, p], 1e-6);
        prop_assert!((g.d_s - fd[0]).abs() <= 1e-5 * fd[0].abs().max(1e-3), "d_s {} vs {}", g.d_s, fd[0]);
        prop_assert!((g.d_p - fd[1]).abs() <= 1e-5 * fd[1].abs().max(1e-3), "d_p {} vs {}", g.d_p, fd[1]);
    }

    #[test]
    fn posterior_gradient_matches_differences(seed in any::<u64>(), variant in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=20);
        let chars = rng.random_range(1..=10);
        let data = common::random_family(&mut rng, n, chars, 3);
        let spec = ModelSpec::new(Variant::ALL[variant], common::predictor_names(3));
        let theta: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut grad = vec![0.0; spec.dim()];
        log_posterior_grad(&spec, &theta, &data, &mut grad).unwrap();
        let mut scratch = vec![0.0; spec.dim()];
        let fd = common::finite_diff(|t| log_posterior_grad(&spec, t, &data, &mut scratch).unwrap(), &theta, 1e-6);
        for (g, f) in grad.iter().zip(&fd) {
            prop_assert!(common::rel_err(*g, *f) < 1e-5 || (g - f).abs() < 1e-8, "{g} vs {f}");
        }
    }

    #[test]
    fn pointwise_sums_to_joint(seed in any::<u64>(), variant in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = common::random_family(&mut rng, 12, 8, 3);
        let spec = ModelSpec::new(Variant::ALL[variant], common::predictor_names(3));
        let theta: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coefs = spec.coefficients(&theta).unwrap();
        let pw = pointwise_loglik(&spec, &coefs, &data).unwrap();
        let joint: f64 = data
            .states
            .iter()
            .zip(&data.predictors)
            .map(|(col, x)| data.tree.log_likelihood(col, link_params(&spec, &coefs, x).unwrap()))
            .sum();
        prop_assert!((pw.iter().sum::<f64>() - joint).abs() < 1e-12 * joint.abs().max(1.0));
    }

    #[test]
    fn p_is_monotone_in_positive_coefficient(b in 0.01f64..3.0, x in -3.0f64..3.0, dx in 0.01f64..2.0) {
        let spec = ModelSpec::new(Variant::Full, common::predictor_names(1));
        let coefs = CoefficientSet {
            p: Component::Regressed { intercept: 0.2, coefs: vec![b] },
            s: Component::Regressed { intercept: 0.0, coefs: vec![0.0] },
        };
        let lo = link_params(&spec, &coefs, &[x]).unwrap().p;
        let hi = link_params(&spec, &coefs, &[x + dx]).unwrap().p;
        prop_assert!(hi > lo);
    }

    #[test]
    fn restricted_variants_nest_in_full(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = common::random_family(&mut rng, 10, 6, 3);
        let names = common::predictor_names(3);
        let full = ModelSpec::new(Variant::Full, names.clone());
        let (p0, s0): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let bp: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cases = [
            (
                Variant::StationaryOnly,
                CoefficientSet { p: Component::Regressed { intercept: p0, coefs: bp.clone() }, s: Component::Constant(s0.exp()) },
                CoefficientSet { p: Component::Regressed { intercept: p0, coefs: bp.clone() }, s: Component::Regressed { intercept: s0, coefs: vec![0.0; 3] } },
            ),
            (
                Variant::SpeedOnly,
                CoefficientSet { p: Component::Constant(1.0 / (1.0 + (-p0).exp())), s: Component::Regressed { intercept: s0, coefs: bs.clone() } },
                CoefficientSet { p: Component::Regressed { intercept: p0, coefs: vec![0.0; 3] }, s: Component::Regressed { intercept: s0, coefs: bs.clone() } },
            ),
            (
                Variant::Null,
                CoefficientSet { p: Component::Constant(1.0 / (1.0 + (-p0).exp())), s: Component::Constant(s0.exp()) },
                CoefficientSet { p: Component::Regressed { intercept: p0, coefs: vec![0.0; 3] }, s: Component::Regressed { intercept: s0, coefs: vec![0.0; 3] } },
            ),
        ];
        for (variant, restricted, embedded) in cases {
            let spec = ModelSpec::new(variant, names.clone());
            let a = pointwise_loglik(&spec, &restricted, &data).unwrap();
            let b = pointwise_loglik(&full, &embedded, &data).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0), "{variant:?}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn all_missing_character_leaves_posterior_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = common::random_family(&mut rng, 15, 5, 3);
    let mut extended = data.clone();
    extended.character_ids.push("empty".into());
    extended.states.push(vec![TraitState::Missing; data.tree.taxa().len()]);
    extended.predictors.push(vec![0.7, -1.2, 3.0]);
    let spec = ModelSpec::new(Variant::Full, common::predictor_names(3));
    let theta = [0.3, -0.2, 0.5, 0.1, 0.4, 0.2, -0.6, 0.05];
    let mut g = vec![0.0; 8];
    let a = log_posterior_grad(&spec, &theta, &data, &mut g).unwrap();
    let b = log_posterior_grad(&spec, &theta, &extended, &mut g).unwrap();
    assert_eq!(a, b);
}

#[test]
fn identical_characters_have_identical_pointwise_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut data = common::random_family(&mut rng, 15, 3, 3);
    data.character_ids.push("copy".into());
    data.states.push(data.states[1].clone());
    data.predictors.push(data.predictors[1].clone());
    let spec = ModelSpec::new(Variant::Full, common::predictor_names(3));
    let post = Posterior::new(&spec, &data).unwrap();
    let pw = post.pointwise(&[0.3, -0.2, 0.5, 0.1, 0.4, 0.2, -0.6, 0.05]);
    assert_eq!(pw[1], pw[3]);
}

#[test]
fn character_permutation_permutes_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = common::random_family(&mut rng, 15, 6, 3);
    let order = [3usize, 0, 5, 1, 4, 2];
    let permuted = FamilyData::from_parts(
        data.tree.clone(),
        order.iter().map(|&j| data.character_ids[j].clone()).collect(),
        order.iter().map(|&j| data.states[j].clone()).collect(),
        order.iter().map(|&j| data.predictors[j].clone()).collect(),
    )
    .unwrap();
    let spec = ModelSpec::new(Variant::SpeedOnly, common::predictor_names(3));
    let theta = [0.1, 0.4, 0.2, -0.6, 0.05];
    let a = Posterior::new(&spec, &data).unwrap().pointwise(&theta);
    let b = Posterior::new(&spec, &permuted).unwrap().pointwise(&theta);
    for (i, &j) in order.iter().enumerate() {
        assert_eq!(b[i], a[j]);
    }
}

#[test]
fn large_trees_do_not_underflow() {
    let tree = simulate_coalescent(400, 21).unwrap().scaled(5.0);
    let plan = PruningTree::new(&tree);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut total = 0.0;
    for _ in 0..400 {
        let col: Vec<TraitState> = (0..400).map(|_| common::random_state(&mut rng, 0.1)).collect();
        let ll = plan.log_likelihood(&col, rp(3.0, 0.4));
        assert!(ll.is_finite() && ll < 0.0);
        total += ll;
    }
    assert!(total.is_finite());
}

#[test]
fn single_precision_rescaling_keeps_values_finite() {
    let tree64 = simulate_coalescent(300, 2).unwrap().scaled(4.0);
    let tree32: PhyloTree<f32> = parse_newick(&tree64.to_newick()).unwrap();
    let plan64 = PruningTree::new(&tree64);
    let plan32 = PruningTree::new(&tree32);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let col: Vec<TraitState> = (0..300).map(|_| common::random_state(&mut rng, 0.0)).collect();
    let a = plan64.log_likelihood(&col, rp(2.0, 0.5));
    let b = plan32.log_likelihood(&col, RateParams::new(2.0f32, 0.5f32).unwrap());
    assert!(b.is_finite());
    assert!(((a - b as f64) / a).abs() < 1e-4, "{a} vs {b}");
}

#[test]
fn two_tip_hand_enumeration() {
    let tree: PhyloTree<f64> = parse_newick("(A:1.0,B:1.0);").unwrap();
    let tips = TipStates::new("c").with("A", TraitState::Present).with("B", TraitState::Present);
    let oracle = common::brute_force_loglik(&tree, &tips.states, 1.0, 0.5);
    assert!((oracle.exp() - 0.28383).abs() < 1e-5);
    assert!((log_likelihood(&tree, &tips, rp(1.0, 0.5)).unwrap() - oracle).abs() < 1e-14);
}

#[test]
fn single_observed_tip_gives_stationary_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let tree = common::random_tree(&mut rng, 5, true);
        let labels = tree.tip_labels();
        let mut tips = TipStates::new("c");
        for (i, l) in labels.iter().enumerate() {
            tips = tips.with(l, if i == 2 { TraitState::Present } else { TraitState::Missing });
        }
        let p = rng.random_range(0.05..0.95);
        let ll = log_likelihood(&tree, &tips, rp(1.3, p)).unwrap();
        assert!((ll - p.ln()).abs() < 1e-12);
        assert!((common::brute_force_loglik(&tree, &tips.states, 1.3, p) - p.ln()).abs() < 1e-12);
    }
}
