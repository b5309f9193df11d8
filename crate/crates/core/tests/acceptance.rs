//! Acceptance suite. Runs without the libtest harness so timings are not
//! disturbed by concurrently running tests; prints one line per criterion
//! and exits nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::typed::{oracle_keys, saturating, table_size, ten_graphs};
use common::*;
use lrbp::bench::{bench_order, fit_records, BenchOptions};
use lrbp::builder::{build_node_centered, slot_count, SharingScheme, TypedGraph};
use lrbp::graph::GraphBuilder;
use lrbp::lbp::{exact_marginals, factor_to_var_lowrank, init_messages, run_lbp, run_lbp_from, LbpOptions};
use lrbp::neural::layer::forward_layers;
use lrbp::neural::{grad_check, train_step, Adam, HiddenStates, LayerParams, Model, Readout, Sample, DEFAULT_EPS};
use lrbp::rng;
use lrbp::seq::{run_seq_experiment, SeqConfig};
use lrbp::tensor::{cp_expand, marginalize_product, normalize_l1, CpFactor, Limits};
use ndarray::{Array1, Array2};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let mut v = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        v.detail += &format!("; {:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs());
        v.pass &= elapsed < limit;
    } else {
        v.detail += &format!("; {:.2}s", elapsed.as_secs_f64());
    }
    v
}

fn lowrank_correctness() -> Verdict {
    let mut r = rng::seeded(1);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let arity = r.random_range(2..=8);
        let d = r.random_range(2..=4);
        let rank = r.random_range(1..=64);
        let f = CpFactor::random(arity, d, rank, case, 1.0).unwrap();
        let table = cp_expand(&f).unwrap();
        let g = GraphBuilder::new(arity, d).low_rank((0..arity).collect(), "f", f).build().unwrap();
        let mut state = init_messages(&g);
        let msgs: Vec<Vec<f64>> = (0..arity).map(|_| rng::positive_message(&mut r, d)).collect();
        for (j, m) in msgs.iter().enumerate() {
            state.var_to_factor_mut(g.edge(0, j)).copy_from_slice(m);
        }
        let incoming: Vec<&[f64]> = msgs.iter().map(|m| m.as_slice()).collect();
        for slot in 0..arity {
            let low = factor_to_var_lowrank(&g, &state, 0, slot).unwrap();
            let mut dense = marginalize_product(&table, &incoming, slot).unwrap();
            normalize_l1(&mut dense).unwrap();
            worst = worst.max(max_rel_dev(&low, &dense));
        }
    }
    Verdict { pass: worst < 1e-10, detail: format!("200 cases, max relative deviation {worst:.3e} (tol 1e-10)") }
}

fn tree_exactness() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut all_converged = true;
    for seed in 0..50 {
        let g = random_tree(1000 + seed, 12, 5);
        let lbp = run_lbp(&g, &LbpOptions::default()).unwrap();
        all_converged &= lbp.converged;
        let exact = exact_marginals(&g, &Limits::default()).unwrap();
        worst = worst.max(lbp.max_abs_diff(&exact));
    }
    Verdict {
        pass: all_converged && worst < 1e-8,
        detail: format!("50 trees, max belief deviation {worst:.3e} (tol 1e-8), all converged: {all_converged}"),
    }
}

fn order_scaling() -> Verdict {
    let opts = BenchOptions { reps: 7, ..BenchOptions::default() };
    let records = bench_order(&[2, 4, 8, 16], 4, 64, &opts).unwrap();
    let fit = fit_records(&records, |r| r.order).unwrap();
    let ratio = records[3].median_ns_per_sweep / records[1].median_ns_per_sweep;
    Verdict {
        pass: fit.r_squared >= 0.95 && ratio <= 5.0,
        detail: format!("R^2 {:.4} (min 0.95), time(16)/time(4) {ratio:.3} (max 5.0)", fit.r_squared),
    }
}

fn gradient_check() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut r = rng::seeded(seed);
        let n = r.random_range(4..8);
        let types: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
        let mut edges: Vec<(usize, usize, usize)> = (1..n).map(|v| (r.random_range(0..v), v, r.random_range(0..2))).collect();
        edges.push((0, n - 1, 0));
        edges.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1));
        let tg = TypedGraph::from_types(&types, &edges).unwrap();
        let g = build_node_centered(&tg, SharingScheme::Cabt, 8).unwrap().to_neural_graph().unwrap();
        let p = LayerParams::init(g.slot_keys(), 4, 8, 8, seed).unwrap();
        let report = grad_check(&g, &p, seed + 100, DEFAULT_EPS, 3).unwrap();
        worst = worst.max(report.max_relative_error);
        skipped += report.skipped;
        checked += report.checked;
    }
    Verdict {
        pass: worst < 1e-4,
        detail: format!("20 seeds, T=3, max relative error {worst:.3e} (tol 1e-4), {checked} coords checked, {skipped} kink coords excluded"),
    }
}

fn zeroed_output_identity() -> Verdict {
    let tg = TypedGraph::from_types(&[0, 1, 0, 1], &[(0, 1, 0), (1, 2, 0), (2, 3, 1), (3, 0, 0)]).unwrap();
    let g = build_node_centered(&tg, SharingScheme::Cabta, 6).unwrap().to_neural_graph().unwrap();
    let mut p = LayerParams::init(g.slot_keys(), 5, 6, 10, 3).unwrap();
    p.mlp.w2.fill(0.0);
    p.mlp.b2.fill(0.0);
    let mut r = rng::seeded(4);
    let h0 = HiddenStates::new(Array2::from_shape_vec((4, 5), rng::uniform_vec(&mut r, 20, -2.0, 2.0)).unwrap());
    let (h, _) = forward_layers(&h0, &g, &p, 3, false).unwrap();
    let same = h.values.iter().zip(h0.values.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    Verdict { pass: same, detail: "3 layers, outputs bitwise equal to inputs".into() }
}

fn message_scale_invariance() -> Verdict {
    let opts = LbpOptions { tol: 1e-13, max_iters: 5000, damping: 0.3, ..LbpOptions::default() };
    let mut worst: f64 = 0.0;
    let mut all_converged = true;
    for seed in 0..20 {
        let g = random_loopy(500 + seed, 6, 2, 3);
        let (base, _) = run_lbp_from(&g, init_messages(&g), &opts).unwrap();
        all_converged &= base.converged;
        for c in [0.1, 10.0] {
            let mut m = init_messages(&g);
            m.scale(c);
            let (scaled, _) = run_lbp_from(&g, m, &opts).unwrap();
            all_converged &= scaled.converged;
            worst = worst.max(base.max_abs_diff(&scaled));
        }
    }
    Verdict {
        pass: all_converged && worst < 1e-10,
        detail: format!("20 loopy graphs, c in {{0.1, 10}}, max belief change {worst:.3e} (tol 1e-10), all converged: {all_converged}"),
    }
}

fn sharing_counts() -> Verdict {
    let mut mismatches = 0;
    for (types, edges) in ten_graphs() {
        for s in SharingScheme::ALL {
            if table_size(&types, &edges, s) != oracle_keys(&types, &edges, s).len() {
                mismatches += 1;
            }
        }
    }
    let mut formula_ok = slot_count(SharingScheme::Cabt, 7, 4) == 35;
    for (a, b) in [(2, 3), (5, 4), (7, 4)] {
        let (types, edges) = saturating(a, b);
        formula_ok &= table_size(&types, &edges, SharingScheme::Cabt) == a * (b + 1);
        formula_ok &= slot_count(SharingScheme::Cabt, a, b) == a * (b + 1);
    }
    Verdict {
        pass: mismatches == 0 && formula_ok,
        detail: format!("10 graphs x 4 schemes, {mismatches} mismatches; CABT product formula holds: {formula_ok}"),
    }
}

fn order_benefit() -> Verdict {
    let mut acc = [0.0; 3];
    let mut gap: f64 = 0.0;
    for seed in 0..3 {
        let records = run_seq_experiment(&SeqConfig { seed, parallel: true, ..SeqConfig::default() }).unwrap();
        let baseline = records.iter().find(|r| r.order.is_none()).unwrap().accuracy;
        for r in &records {
            if let Some(k) = r.order {
                acc[k - 1] += r.accuracy / 3.0;
                if k == 1 {
                    gap = gap.max((r.accuracy - baseline).abs());
                }
            }
        }
    }
    Verdict {
        pass: acc[2] >= acc[0],
        detail: format!(
            "3 seeds, noise {}, mean accuracy order1 {:.4}, order2 {:.4}, order3 {:.4}; order-1 vs baseline gap {:.4}",
            SeqConfig::default().noise,
            acc[0],
            acc[1],
            acc[2],
            gap
        ),
    }
}

fn single_sample_training() -> Verdict {
    let tg = TypedGraph::from_types(&[0, 1, 2, 1, 0], &[(0, 1, 0), (1, 2, 1), (2, 3, 0), (3, 4, 0), (1, 3, 1)]).unwrap();
    let graph = build_node_centered(&tg, SharingScheme::Cabt, 8).unwrap().to_neural_graph().unwrap();
    let layer = LayerParams::init(graph.slot_keys(), 4, 8, 8, 7).unwrap();
    let mut model = Model { layer, readout: Readout::init(4, 1, 8), layers: 3 };
    let mut r = rng::seeded(9);
    let h0 = Array2::from_shape_vec((5, 4), rng::uniform_vec(&mut r, 20, -1.0, 1.0)).unwrap();
    let sample = Sample { graph, h0, target: Array1::from(vec![2.0]) };
    let batch = std::slice::from_ref(&sample);
    let mut opt = Adam::for_params(&model);
    let initial = train_step(batch, &mut model, &mut opt, 1e-3, false).unwrap();
    for _ in 1..500 {
        train_step(batch, &mut model, &mut opt, 1e-3, false).unwrap();
    }
    let last = (model.predict(&sample.graph, &sample.h0).unwrap()[0] - 2.0).abs();
    Verdict {
        pass: last < 0.1 * initial,
        detail: format!("500 Adam steps at lr 1e-3, loss {initial:.4e} -> {last:.4e} (must be < 10% of initial)"),
    }
}

type Criterion = (&'static str, Option<u64>, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("low-rank messages equal dense marginalization", Some(30), lowrank_correctness),
        ("LBP is exact on trees", Some(60), tree_exactness),
        ("sweep time is linear in factor order", None, order_scaling),
        ("hand-derived gradients match finite differences", Some(120), gradient_check),
        ("zeroed MLP output layer gives the identity", None, zeroed_output_identity),
        ("initial message scale does not change beliefs", None, message_scale_invariance),
        ("slot counts match enumerated key sets", None, sharing_counts),
        ("higher-order factors help on the sequence task", None, order_benefit),
        ("single-sample training reaches 10% of initial loss", None, single_sample_training),
    ];
    let mut failed = 0;
    for (k, (name, limit, f)) in criteria.into_iter().enumerate() {
        let v = timed(limit.map(Duration::from_secs), f);
        println!("{} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, k + 1, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("NOTE [10] benchmark accuracies on real molecular and text datasets are not reproduced; no datasets ship with this crate");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
