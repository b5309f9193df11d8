//! Forward and backward passes of one neural low-rank layer, plus helpers
//! that stack `T` layers sharing one parameter set.

use ndarray::{Array1, Array2, Axis};

use super::params::{GradientBundle, LayerParams};
use super::{HiddenStates, NeuralGraph};
use crate::error::{Error, Result};
use crate::par;

/// Intermediates recorded by [`lrbp_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    slot_map: Vec<usize>,
    input: Array2<f64>,
    rank: usize,
    /// `W_in^T h_j` per edge, `R` values each.
    gammas: Vec<f64>,
    /// Hadamard product over the other edges of the same factor, per edge.
    loo: Vec<f64>,
    msg: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl Tape {
    pub fn input(&self) -> &Array2<f64> {
        &self.input
    }

    /// Aggregated message per node, before the MLP.
    pub fn messages(&self) -> &Array2<f64> {
        &self.msg
    }

    /// MLP hidden pre-activations, one row per node.
    pub fn pre_activations(&self) -> &Array2<f64> {
        &self.pre
    }
}

fn row_dot(row: ndarray::ArrayView1<f64>, v: &[f64]) -> f64 {
    row.iter().zip(v).map(|(a, b)| a * b).sum()
}

struct FactorForward {
    gammas: Vec<f64>,
    loo: Vec<f64>,
    contrib: Vec<f64>,
}

fn factor_forward(
    g: &NeuralGraph,
    p: &LayerParams,
    slot_map: &[usize],
    h: &Array2<f64>,
    t: usize,
    a: usize,
) -> Result<FactorForward> {
    let f = &g.factors()[a];
    let n = f.scope.len();
    let rank = p.rank();
    let d_h = p.d_h();

    let mut gammas = vec![0.0; n * rank];
    for (k, (&node, &slot)) in f.scope.iter().zip(&f.slots).enumerate() {
        let w_in = &p.slots[slot_map[slot]].w_in;
        let gamma = &mut gammas[k * rank..(k + 1) * rank];
        for (row, &hx) in w_in.outer_iter().zip(h.row(node).iter()) {
            gamma.iter_mut().zip(row.iter()).for_each(|(g, w)| *g += w * hx);
        }
    }

    let mut suffix = vec![1.0; (n + 1) * rank];
    for k in (0..n).rev() {
        for r in 0..rank {
            suffix[k * rank + r] = suffix[(k + 1) * rank + r] * gammas[k * rank + r];
        }
    }
    let mut prefix = vec![1.0; rank];
    let mut loo = vec![0.0; n * rank];
    let mut contrib = vec![0.0; n * d_h];
    for k in 0..n {
        let l = &mut loo[k * rank..(k + 1) * rank];
        for r in 0..rank {
            l[r] = prefix[r] * suffix[(k + 1) * rank + r];
        }
        let w_out = &p.slots[slot_map[f.slots[k]]].w_out;
        let c = &mut contrib[k * d_h..(k + 1) * d_h];
        for (cx, row) in c.iter_mut().zip(w_out.outer_iter()) {
            *cx = row_dot(row, l);
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                iteration: t,
                context: format!("message from factor {a} to node {}", f.scope[k]),
            });
        }
        prefix.iter_mut().zip(&gammas[k * rank..(k + 1) * rank]).for_each(|(p, g)| *p *= g);
    }
    Ok(FactorForward { gammas, loo, contrib })
}

/// One layer: `h' = h + MLP(sum_a W_out[a,i] (⊙_{j != i} W_in[a,j]^T h_j))`.
pub fn lrbp_forward(
    h: &HiddenStates,
    g: &NeuralGraph,
    p: &LayerParams,
    parallel: bool,
) -> Result<(HiddenStates, Tape)> {
    let d_h = p.d_h();
    let rank = p.rank();
    if h.values.dim() != (g.num_nodes(), d_h) {
        return Err(Error::Shape(format!(
            "hidden states are {:?}, expected ({}, {d_h})",
            h.values.dim(),
            g.num_nodes()
        )));
    }
    if let Some((i, _)) = h.values.outer_iter().enumerate().find(|(_, r)| r.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite { iteration: h.t, context: format!("input state of node {i}") });
    }
    let slot_map = g.resolve_slots(p)?;

    let per_factor = par::try_map_range(g.factors().len(), parallel, |a| {
        factor_forward(g, p, &slot_map, &h.values, h.t, a)
    })?;

    let edges = g.num_edges();
    let mut gammas = Vec::with_capacity(edges * rank);
    let mut loo = Vec::with_capacity(edges * rank);
    let mut contrib = Vec::with_capacity(edges * d_h);
    for ff in per_factor {
        gammas.extend_from_slice(&ff.gammas);
        loo.extend_from_slice(&ff.loo);
        contrib.extend_from_slice(&ff.contrib);
    }

    let mut msg = Array2::<f64>::zeros((g.num_nodes(), d_h));
    for (i, mut row) in msg.outer_iter_mut().enumerate() {
        for &e in g.node_edges(i) {
            row.iter_mut().zip(&contrib[e * d_h..(e + 1) * d_h]).for_each(|(m, c)| *m += c);
        }
    }

    let mlp = &p.mlp;
    let pre = msg.dot(&mlp.w1.t()) + &mlp.b1;
    let act = pre.mapv(|z| z.max(0.0));
    let out = act.dot(&mlp.w2.t()) + &mlp.b2;
    let next = &h.values + &out;
    if let Some((i, _)) = next.outer_iter().enumerate().find(|(_, r)| r.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite { iteration: h.t, context: format!("updated state of node {i}") });
    }

    let tape = Tape { slot_map, input: h.values.clone(), rank, gammas, loo, msg, pre, act };
    Ok((HiddenStates { values: next, t: h.t + 1 }, tape))
}

fn outer_add(target: &mut Array2<f64>, left: ndarray::ArrayView1<f64>, right: &[f64]) {
    for (mut row, &l) in target.outer_iter_mut().zip(left.iter()) {
        if l != 0.0 {
            row.iter_mut().zip(right).for_each(|(t, r)| *t += l * r);
        }
    }
}

/// Reverse pass for one layer. `upstream` is `dL/dh'`; the result holds
/// `dL/dparams` and `dL/dh`.
pub fn lrbp_backward(tape: &Tape, g: &NeuralGraph, p: &LayerParams, upstream: &Array2<f64>) -> Result<GradientBundle> {
    let d_h = p.d_h();
    let rank = tape.rank;
    if upstream.dim() != tape.input.dim() {
        return Err(Error::Shape(format!(
            "upstream gradient is {:?}, tape holds states of shape {:?}",
            upstream.dim(),
            tape.input.dim()
        )));
    }
    if tape.gammas.len() != g.num_edges() * rank || rank != p.rank() {
        return Err(Error::Shape("tape was recorded for a different graph or parameter set".into()));
    }

    let mut grads = p.zeros_like();
    let mut dh = upstream.clone();

    let mlp = &p.mlp;
    grads.mlp.w2 = upstream.t().dot(&tape.act);
    grads.mlp.b2 = upstream.sum_axis(Axis(0));
    let mut dpre = upstream.dot(&mlp.w2);
    dpre.zip_mut_with(&tape.pre, |d, &z| {
        if z <= 0.0 {
            *d = 0.0
        }
    });
    grads.mlp.w1 = dpre.t().dot(&tape.msg);
    grads.mlp.b1 = dpre.sum_axis(Axis(0));
    let dmsg = dpre.dot(&mlp.w1);

    let mut dloo = vec![0.0; rank];
    let mut dgammas: Vec<f64> = Vec::new();
    let mut prefix = vec![0.0; rank];
    let mut suffix: Vec<f64> = Vec::new();
    let mut tmp = Array1::<f64>::zeros(d_h);
    for (a, f) in g.factors().iter().enumerate() {
        let n = f.scope.len();
        let base = g.factor_edges(a).start;
        let gam = |k: usize| &tape.gammas[(base + k) * rank..(base + k + 1) * rank];
        dgammas.clear();
        dgammas.resize(n * rank, 0.0);

        for k in 0..n {
            let slot = tape.slot_map[f.slots[k]];
            let node_grad = dmsg.row(f.scope[k]);
            if node_grad.iter().all(|&x| x == 0.0) {
                continue;
            }
            let loo = &tape.loo[(base + k) * rank..(base + k + 1) * rank];
            outer_add(&mut grads.slots[slot].w_out, node_grad, loo);
            let w_out = &p.slots[slot].w_out;
            dloo.iter_mut().for_each(|x| *x = 0.0);
            for (row, &gx) in w_out.outer_iter().zip(node_grad.iter()) {
                dloo.iter_mut().zip(row.iter()).for_each(|(d, w)| *d += w * gx);
            }

            // d(loo_k)/d(gamma_j) for j != k is the product over the others,
            // built from prefix/suffix products that skip k.
            let others: Vec<usize> = (0..n).filter(|&j| j != k).collect();
            let m = others.len();
            suffix.clear();
            suffix.resize((m + 1) * rank, 1.0);
            for q in (0..m).rev() {
                let gj = gam(others[q]);
                for r in 0..rank {
                    suffix[q * rank + r] = suffix[(q + 1) * rank + r] * gj[r];
                }
            }
            prefix.iter_mut().for_each(|x| *x = 1.0);
            for (q, &j) in others.iter().enumerate() {
                let dg = &mut dgammas[j * rank..(j + 1) * rank];
                for r in 0..rank {
                    dg[r] += dloo[r] * prefix[r] * suffix[(q + 1) * rank + r];
                }
                prefix.iter_mut().zip(gam(j)).for_each(|(p, g)| *p *= g);
            }
        }

        for j in 0..n {
            let slot = tape.slot_map[f.slots[j]];
            let node = f.scope[j];
            let dg = &dgammas[j * rank..(j + 1) * rank];
            outer_add(&mut grads.slots[slot].w_in, tape.input.row(node), dg);
            let w_in = &p.slots[slot].w_in;
            for (t, row) in tmp.iter_mut().zip(w_in.outer_iter()) {
                *t = row_dot(row, dg);
            }
            dh.row_mut(node).zip_mut_with(&tmp, |d, t| *d += t);
        }
    }

    Ok(GradientBundle { params: grads, states: dh })
}

/// Applies `layers` layers that share `p`.
pub fn forward_layers(
    h0: &HiddenStates,
    g: &NeuralGraph,
    p: &LayerParams,
    layers: usize,
    parallel: bool,
) -> Result<(HiddenStates, Vec<Tape>)> {
    let mut h = h0.clone();
    let mut tapes = Vec::with_capacity(layers);
    for _ in 0..layers {
        let (next, tape) = lrbp_forward(&h, g, p, parallel)?;
        tapes.push(tape);
        h = next;
    }
    Ok((h, tapes))
}

/// Backward through [`forward_layers`]; parameter gradients of all layers
/// are summed since the layers share parameters.
pub fn backward_layers(tapes: &[Tape], g: &NeuralGraph, p: &LayerParams, upstream: &Array2<f64>) -> Result<GradientBundle> {
    let mut total = p.zeros_like();
    let mut grad = upstream.clone();
    for tape in tapes.iter().rev() {
        let b = lrbp_backward(tape, g, p, &grad)?;
        total.add_assign(&b.params);
        grad = b.states;
    }
    Ok(GradientBundle { params: total, states: grad })
}
