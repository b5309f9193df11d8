#![allow(dead_code)]

pub mod typed;

use lrbp::graph::{FactorGraph, GraphBuilder, Payload};
use lrbp::rng::{self, SeededRng};
use lrbp::tensor::{CpFactor, DenseTensor};
use rand::seq::SliceRandom;
use rand::Rng;

/// Factor value at a full assignment of its scope, straight from the
/// definition: table lookup or `sum_r prod_j W_j[x_j, r]`.
pub fn factor_value(g: &FactorGraph, a: usize, x: &[usize]) -> f64 {
    let f = g.factor(a);
    let local: Vec<usize> = f.scope.iter().map(|&v| x[v]).collect();
    match &f.payload {
        Payload::Dense(t) => t.get(&local),
        Payload::LowRank(id) => cp_value(g.param(*id), &local),
    }
}

pub fn cp_value(f: &CpFactor, x: &[usize]) -> f64 {
    (0..f.rank()).map(|r| x.iter().enumerate().map(|(j, &xj)| f.weight(j)[[xj, r]]).product::<f64>()).sum()
}

/// Unnormalized weight of one assignment.
pub fn assignment_weight(g: &FactorGraph, x: &[usize]) -> f64 {
    let mut w = 1.0;
    if let Some(u) = g.unary() {
        for (i, &xi) in x.iter().enumerate() {
            w *= u[i][xi];
        }
    }
    for a in 0..g.num_factors() {
        w *= factor_value(g, a, x);
    }
    w
}

/// Marginals and partition function by enumerating assignments with the
/// variables incremented in the order `order` (first entry fastest).
pub fn brute_marginals(g: &FactorGraph, order: &[usize]) -> (Vec<Vec<f64>>, f64) {
    let n = g.num_vars();
    let d = g.cardinality();
    let mut x = vec![0usize; n];
    let mut marg = vec![vec![0.0; d]; n];
    let mut z = 0.0;
    loop {
        let w = assignment_weight(g, &x);
        z += w;
        for i in 0..n {
            marg[i][x[i]] += w;
        }
        let mut k = 0;
        loop {
            if k == n {
                for m in &mut marg {
                    m.iter_mut().for_each(|v| *v /= z);
                }
                return (marg, z);
            }
            let v = order[k];
            x[v] += 1;
            if x[v] < d {
                break;
            }
            x[v] = 0;
            k += 1;
        }
    }
}

/// Direct sum for one outgoing message of a dense table.
pub fn message_by_definition(t: &DenseTensor, incoming: &[&[f64]], keep: usize) -> Vec<f64> {
    let shape = t.shape().to_vec();
    let mut out = vec![0.0; shape[keep]];
    let mut x = vec![0usize; shape.len()];
    loop {
        let mut w = t.get(&x);
        for (j, m) in incoming.iter().enumerate() {
            if j != keep {
                w *= m[x[j]];
            }
        }
        out[x[keep]] += w;
        let mut k = shape.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            x[k] += 1;
            if x[k] < shape[k] {
                break;
            }
            x[k] = 0;
        }
    }
}

pub fn random_table(r: &mut SeededRng, arity: usize, d: usize, lo: f64) -> DenseTensor {
    let n = d.pow(arity as u32);
    DenseTensor::new(vec![d; arity], rng::uniform_vec(r, n, lo, 1.0)).unwrap()
}

fn add_factor(b: GraphBuilder, r: &mut SeededRng, scope: Vec<usize>, d: usize, name: String) -> GraphBuilder {
    let arity = scope.len();
    if r.random_bool(0.5) {
        let t = random_table(r, arity, d, 0.05);
        b.dense(scope, t)
    } else {
        let rank = r.random_range(1..=6);
        let f = CpFactor::random(arity, d, rank, r.random(), 1.0).unwrap();
        b.low_rank(scope, &name, f)
    }
}

/// A random factor tree with at most `max_vars` variables and mixed dense
/// and low-rank factors of arity up to `max_arity`.
pub fn random_tree(seed: u64, max_vars: usize, max_arity: usize) -> FactorGraph {
    let mut r = rng::seeded(seed);
    let d = r.random_range(2..=3);
    let target = r.random_range(2..=max_vars);
    let mut n = 1;
    let mut scopes = Vec::new();
    while n < target {
        let anchor = r.random_range(0..n);
        let fresh = r.random_range(1..=(max_arity - 1).min(target - n));
        let mut scope: Vec<usize> = (n..n + fresh).collect();
        scope.insert(r.random_range(0..=fresh), anchor);
        n += fresh;
        scopes.push(scope);
    }
    for _ in 0..r.random_range(0..3) {
        scopes.push(vec![r.random_range(0..n)]);
    }
    let mut b = GraphBuilder::new(n, d);
    if r.random_bool(0.5) {
        for i in 0..n {
            b = b.unary(i, rng::uniform_vec(&mut r, d, 0.1, 1.0));
        }
    }
    for (k, scope) in scopes.into_iter().enumerate() {
        b = add_factor(b, &mut r, scope, d, format!("p{k}"));
    }
    b.build().unwrap()
}

/// A random graph with cycles: `num_vars` variables, a ring of pairwise
/// factors plus random higher-order factors.
pub fn random_loopy(seed: u64, num_vars: usize, extra: usize, max_arity: usize) -> FactorGraph {
    let mut r = rng::seeded(seed);
    let d = r.random_range(2..=3);
    let mut b = GraphBuilder::new(num_vars, d);
    for i in 0..num_vars {
        b = add_factor(b, &mut r, vec![i, (i + 1) % num_vars], d, format!("ring{i}"));
    }
    let mut vars: Vec<usize> = (0..num_vars).collect();
    for k in 0..extra {
        vars.shuffle(&mut r);
        let arity = r.random_range(2..=max_arity.min(num_vars));
        b = add_factor(b, &mut r, vars[..arity].to_vec(), d, format!("hi{k}"));
    }
    b.build().unwrap()
}

pub fn max_rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn max_abs_dev(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(u, v)| u.iter().zip(v).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max)
}
