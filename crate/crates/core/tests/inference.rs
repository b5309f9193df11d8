mod common;

use common::*;
use lrbp::graph::{FactorGraph, GraphBuilder};
use lrbp::lbp::{exact_marginals, init_messages, lowrank_message, run_lbp, run_lbp_from, LbpOptions};
use lrbp::rng;
use lrbp::tensor::{cp_expand, marginalize_product, CpFactor, DenseTensor, Limits};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn positive_messages(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..n).map(|_| rng::positive_message(&mut r, d)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lowrank_message_equals_dense_marginalization(
        arity in 2usize..=8, d in 2usize..=4, rank in 1usize..=64, seed in any::<u64>()
    ) {
        prop_assume!(d.pow(arity as u32) <= 1 << 16);
        let f = CpFactor::random(arity, d, rank, seed, 1.0).unwrap();
        let table = cp_expand(&f).unwrap();
        let msgs = positive_messages(seed ^ 7, arity, d);
        let incoming: Vec<&[f64]> = msgs.iter().map(|m| m.as_slice()).collect();
        for slot in 0..arity {
            let (low, _) = lowrank_message(&f, &incoming, slot);
            let dense = marginalize_product(&table, &incoming, slot).unwrap();
            prop_assert!(max_rel_dev(&low, &dense) < 1e-10);
        }
    }

    #[test]
    fn marginalize_product_matches_definition(arity in 1usize..=5, d in 2usize..=3, seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let t = random_table(&mut r, arity, d, 0.0);
        let msgs = positive_messages(seed, arity, d);
        let incoming: Vec<&[f64]> = msgs.iter().map(|m| m.as_slice()).collect();
        for keep in 0..arity {
            let got = marginalize_product(&t, &incoming, keep).unwrap();
            prop_assert!(max_rel_dev(&got, &message_by_definition(&t, &incoming, keep)) < 1e-12);
        }
    }
}

#[test]
fn arity_six_every_slot() {
    let f = CpFactor::random(6, 4, 32, 42, 1.0).unwrap();
    let table = cp_expand(&f).unwrap();
    let msgs = positive_messages(43, 6, 4);
    let incoming: Vec<&[f64]> = msgs.iter().map(|m| m.as_slice()).collect();
    for slot in 0..6 {
        let (low, _) = lowrank_message(&f, &incoming, slot);
        let oracle = message_by_definition(&table, &incoming, slot);
        assert!(max_rel_dev(&low, &oracle) < 1e-10, "slot {slot}");
    }
}

#[test]
fn cp_expansion_matches_definition() {
    let f = CpFactor::random(4, 3, 5, 9, 1.0).unwrap();
    let t = cp_expand(&f).unwrap();
    let mut x = vec![0usize; 4];
    for flat in 0..81 {
        let mut rem = flat;
        for k in (0..4).rev() {
            x[k] = rem % 3;
            rem /= 3;
        }
        assert!((t.data()[flat] - cp_value(&f, &x)).abs() < 1e-14);
    }
}

#[test]
fn loopy_lowrank_schedule_equals_dense_schedule() {
    let mut r = rng::seeded(2024);
    let g = GraphBuilder::new(6, 3)
        .low_rank(vec![0, 2, 3, 5], "big", CpFactor::random(4, 3, 8, 1, 1.0).unwrap())
        .dense(vec![0, 1], random_table(&mut r, 2, 3, 0.1))
        .dense(vec![1, 2], random_table(&mut r, 2, 3, 0.1))
        .dense(vec![3, 4], random_table(&mut r, 2, 3, 0.1))
        .dense(vec![4, 5], random_table(&mut r, 2, 3, 0.1))
        .dense(vec![5, 0], random_table(&mut r, 2, 3, 0.1))
        .build()
        .unwrap();
    let dense = g.to_dense(&Limits::default()).unwrap();
    let opts = LbpOptions::default();
    let a = run_lbp(&g, &opts).unwrap();
    let b = run_lbp(&dense, &opts).unwrap();
    assert!(a.converged && b.converged);
    assert_eq!(a.iterations_used, b.iterations_used);
    assert!(max_abs_dev(&a.beliefs, &b.beliefs) < 1e-9);
}

#[test]
fn trees_are_exact_against_enumeration() {
    for seed in 0..25 {
        let g = random_tree(seed, 10, 5);
        let lbp = run_lbp(&g, &LbpOptions::default()).unwrap();
        assert!(lbp.converged, "seed {seed}");
        let mut order: Vec<usize> = (0..g.num_vars()).collect();
        order.shuffle(&mut rng::seeded(seed));
        let (oracle, _) = brute_marginals(&g, &order);
        assert!(max_abs_dev(&lbp.beliefs, &oracle) < 1e-8, "seed {seed}");
    }
}

#[test]
fn exact_marginals_match_permuted_enumeration() {
    for seed in 0..10 {
        let g = random_loopy(seed, 6, 2, 4);
        let exact = exact_marginals(&g, &Limits::default()).unwrap();
        let mut order: Vec<usize> = (0..6).collect();
        order.shuffle(&mut rng::seeded(seed + 100));
        let (oracle, _) = brute_marginals(&g, &order);
        assert!(max_abs_dev(&exact.beliefs, &oracle) < 1e-12, "seed {seed}");
    }
}

#[test]
fn partition_function_examples() {
    let g = GraphBuilder::new(1, 2).unary(0, vec![2.0, 6.0]).build().unwrap();
    assert_eq!(g.joint_table(&Limits::default()).unwrap().1, 8.0);

    let mut r = rng::seeded(5);
    let g = GraphBuilder::new(4, 2)
        .low_rank(vec![0, 1, 3], "f", CpFactor::random(3, 2, 4, 5, 1.0).unwrap())
        .dense(vec![2, 3], random_table(&mut r, 2, 2, 0.1))
        .dense(vec![1, 2], random_table(&mut r, 2, 2, 0.1))
        .build()
        .unwrap();
    let (_, z) = g.joint_table(&Limits::default()).unwrap();
    let (_, oracle) = brute_marginals(&g, &[0, 1, 2, 3]);
    assert!((z - oracle).abs() / oracle < 1e-10);
}

fn permuted_factors(g: &FactorGraph, perm: &[usize]) -> FactorGraph {
    let params = (0..g.params().len())
        .map(|k| (g.param_name(lrbp::ParamId(k)).to_string(), g.params()[k].clone()))
        .collect();
    let factors = perm.iter().map(|&a| g.factor(a).clone()).collect();
    FactorGraph::build(g.num_vars(), g.cardinality(), factors, g.unary().map(|u| u.to_vec()), params).unwrap()
}

#[test]
fn partition_function_ignores_factor_order() {
    let g = random_loopy(77, 5, 3, 4);
    let (_, z) = g.joint_table(&Limits::default()).unwrap();
    let mut perm: Vec<usize> = (0..g.num_factors()).collect();
    for seed in 0..5 {
        perm.shuffle(&mut rng::seeded(seed));
        let (_, zp) = permuted_factors(&g, &perm).joint_table(&Limits::default()).unwrap();
        assert!((z - zp).abs() / z < 1e-12);
    }
}

#[test]
fn initial_message_scale_does_not_change_beliefs() {
    for seed in 0..5 {
        let g = random_loopy(seed, 6, 2, 3);
        let opts = LbpOptions { tol: 1e-13, max_iters: 2000, damping: 0.3, ..LbpOptions::default() };
        let (base, _) = run_lbp_from(&g, init_messages(&g), &opts).unwrap();
        for c in [0.1, 10.0] {
            let mut m = init_messages(&g);
            m.scale(c);
            let (scaled, _) = run_lbp_from(&g, m, &opts).unwrap();
            assert!(base.converged && scaled.converged);
            assert!(max_abs_dev(&base.beliefs, &scaled.beliefs) < 1e-10, "seed {seed}, c {c}");
        }
    }
}

#[test]
fn zero_damping_is_plain_flooding() {
    let g = random_loopy(3, 5, 2, 3);
    let a = run_lbp(&g, &LbpOptions { damping: 0.0, ..LbpOptions::default() }).unwrap();
    let b = run_lbp(&g, &LbpOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn damping_keeps_tree_fixed_point() {
    let g = random_tree(8, 8, 4);
    let plain = run_lbp(&g, &LbpOptions::default()).unwrap();
    let damped = run_lbp(&g, &LbpOptions { damping: 0.5, tol: 1e-12, max_iters: 1000, ..LbpOptions::default() }).unwrap();
    assert!(damped.converged);
    assert!(max_abs_dev(&plain.beliefs, &damped.beliefs) < 1e-8);
}

#[test]
fn parallel_and_sequential_runs_agree_bitwise() {
    let g = random_loopy(11, 8, 4, 5);
    let a = run_lbp(&g, &LbpOptions::default()).unwrap();
    let b = run_lbp(&g, &LbpOptions { parallel: true, ..LbpOptions::default() }).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dense_table_agrees_with_expansion_in_graph() {
    let f = CpFactor::random(3, 2, 3, 1, 1.0).unwrap();
    let t: DenseTensor = cp_expand(&f).unwrap();
    let a = GraphBuilder::new(3, 2).low_rank(vec![0, 1, 2], "f", f).unary(1, vec![0.2, 0.8]).build().unwrap();
    let b = GraphBuilder::new(3, 2).dense(vec![0, 1, 2], t).unary(1, vec![0.2, 0.8]).build().unwrap();
    let (ba, bb) = (run_lbp(&a, &LbpOptions::default()).unwrap(), run_lbp(&b, &LbpOptions::default()).unwrap());
    assert!(max_abs_dev(&ba.beliefs, &bb.beliefs) < 1e-12);
}
