//! Sum-product loopy belief propagation.
//!
//! Messages live on edges (see [`crate::graph`]): for every edge there is a
//! variable-to-factor and a factor-to-variable vector of length `d`. One
//! iteration of the flooding schedule recomputes every variable-to-factor
//! message from the previous factor-to-variable messages, then every
//! factor-to-variable message from the fresh variable-to-factor messages.
//! All messages are L1-normalized after each update.
//!
//! Factors with a CP payload use the low-rank update: project each incoming
//! message into rank space (`gamma_j = W_j^T m_j`), multiply the projections
//! of every slot except the receiver elementwise and map the product back
//! with the receiver's weights (`m = W_i (prod_{j != i} gamma_j)`). Dense
//! factors are marginalized by enumeration.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{FactorGraph, Payload};
use crate::par;
use crate::tensor::{marginalize_product, normalize_l1, CpFactor, DenseTensor, Limits};

/// Entries below this (before normalization) count as sign violations.
pub const SIGN_SLACK: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Synchronous updates from the previous iteration's messages.
    #[default]
    Flooding,
}

#[derive(Debug, Clone)]
pub struct LbpOptions {
    pub max_iters: usize,
    /// Convergence threshold on the max-norm change of any message.
    pub tol: f64,
    /// `new <- (1 - damping) * new + damping * old`, in `[0, 1)`.
    pub damping: f64,
    pub schedule: Schedule,
    /// Fan message computations out to the rayon pool.
    pub parallel: bool,
    pub limits: Limits,
}

impl Default for LbpOptions {
    fn default() -> Self {
        LbpOptions {
            max_iters: 200,
            tol: 1e-8,
            damping: 0.0,
            schedule: Schedule::Flooding,
            parallel: false,
            limits: Limits::from_env(),
        }
    }
}

impl LbpOptions {
    fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidArgument(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidArgument(format!("damping must be in [0, 1), got {}", self.damping)));
        }
        Ok(())
    }
}

/// Both message families, indexed by edge, `d` entries per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    d: usize,
    var_to_factor: Vec<f64>,
    factor_to_var: Vec<f64>,
}

impl MessageState {
    pub fn cardinality(&self) -> usize {
        self.d
    }

    pub fn num_edges(&self) -> usize {
        self.var_to_factor.len() / self.d
    }

    pub fn var_to_factor(&self, e: usize) -> &[f64] {
        &self.var_to_factor[e * self.d..(e + 1) * self.d]
    }

    pub fn factor_to_var(&self, e: usize) -> &[f64] {
        &self.factor_to_var[e * self.d..(e + 1) * self.d]
    }

    pub fn var_to_factor_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.var_to_factor[e * self.d..(e + 1) * self.d]
    }

    pub fn factor_to_var_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.factor_to_var[e * self.d..(e + 1) * self.d]
    }

    /// Multiplies every stored message by `c`.
    pub fn scale(&mut self, c: f64) {
        self.var_to_factor.iter_mut().chain(self.factor_to_var.iter_mut()).for_each(|x| *x *= c);
    }

    fn max_abs_diff(&self, other: &MessageState) -> f64 {
        self.var_to_factor
            .iter()
            .zip(&other.var_to_factor)
            .chain(self.factor_to_var.iter().zip(&other.factor_to_var))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn all_finite(&self) -> bool {
        self.var_to_factor.iter().chain(&self.factor_to_var).all(|x| x.is_finite())
    }
}

/// Rank-space projections `gamma = W_slot^T m_{var -> factor}` for every
/// edge of a CP factor. Edges of dense factors have no entry.
#[derive(Debug, Clone)]
pub struct GammaCache {
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl GammaCache {
    pub fn compute(g: &FactorGraph, state: &MessageState) -> Self {
        let mut offsets = Vec::with_capacity(g.num_edges() + 1);
        let mut data = Vec::new();
        offsets.push(0);
        for (a, f) in g.factors().iter().enumerate() {
            for (slot, e) in g.factor_edges(a).enumerate() {
                if let Payload::LowRank(id) = f.payload {
                    let w = g.param(id).weight(slot);
                    let start = data.len();
                    data.resize(start + w.ncols(), 0.0);
                    project(w, state.var_to_factor(e), &mut data[start..]);
                }
                offsets.push(data.len());
            }
        }
        GammaCache { offsets, data }
    }

    /// Projection for edge `e`; empty for dense factors.
    pub fn get(&self, e: usize) -> &[f64] {
        &self.data[self.offsets[e]..self.offsets[e + 1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefSet {
    pub beliefs: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Max-norm message change of the last iteration; `None` if none ran.
    pub final_delta: Option<f64>,
    /// Low-rank messages that had entries below [`SIGN_SLACK`] before normalization.
    pub sign_warnings: usize,
    /// Max-norm message change per iteration.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl BeliefSet {
    pub fn max_abs_diff(&self, other: &BeliefSet) -> f64 {
        self.beliefs
            .iter()
            .flatten()
            .zip(other.beliefs.iter().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// All messages uniform `1/d`.
pub fn init_messages(g: &FactorGraph) -> MessageState {
    let d = g.cardinality();
    let n = g.num_edges() * d;
    MessageState { d, var_to_factor: vec![1.0 / d as f64; n], factor_to_var: vec![1.0 / d as f64; n] }
}

/// `gamma[r] = sum_x w[x, r] * m[x]`
fn project(w: &ndarray::Array2<f64>, m: &[f64], gamma: &mut [f64]) {
    gamma.iter_mut().for_each(|g| *g = 0.0);
    for (row, &mx) in w.outer_iter().zip(m) {
        for (g, &wx) in gamma.iter_mut().zip(row.iter()) {
            *g += wx * mx;
        }
    }
}

/// `out[x] = sum_r w[x, r] * p[r]`
fn back_project(w: &ndarray::Array2<f64>, p: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.outer_iter()) {
        *o = row.iter().zip(p).map(|(a, b)| a * b).sum();
    }
}

fn var_label(i: usize) -> String {
    format!("variable {i}")
}

fn factor_label(a: usize) -> String {
    format!("factor {a}")
}

/// Writes `m_{i -> a}` for edge `e` into `out` from the factor-to-variable
/// messages in `f2v`.
fn var_message_into(g: &FactorGraph, f2v: &[f64], e: usize, out: &mut [f64]) -> Result<()> {
    let d = g.cardinality();
    let i = g.edge_var(e);
    match g.unary_of(i) {
        Some(u) => out.copy_from_slice(u),
        None => out.iter_mut().for_each(|x| *x = 1.0),
    }
    for &other in g.var_edges(i) {
        if other != e {
            let m = &f2v[other * d..(other + 1) * d];
            out.iter_mut().zip(m).for_each(|(o, x)| *o *= x);
        }
    }
    normalize_l1(out)
        .map(|_| ())
        .ok_or_else(|| Error::ZeroMessage { from: var_label(i), to: factor_label(g.edge_factor(e)) })
}

/// Variable-to-factor update for the pair `(i, a)`.
pub fn var_to_factor_update(state: &MessageState, g: &FactorGraph, i: usize, a: usize) -> Result<Vec<f64>> {
    let e = g
        .find_edge(i, a)
        .ok_or_else(|| Error::InvalidArgument(format!("factor {a} is not adjacent to variable {i}")))?;
    let mut out = vec![0.0; g.cardinality()];
    var_message_into(g, &state.factor_to_var, e, &mut out)?;
    Ok(out)
}

fn incoming_messages<'s>(g: &FactorGraph, state: &'s MessageState, a: usize) -> Vec<&'s [f64]> {
    g.factor_edges(a).map(|e| state.var_to_factor(e)).collect()
}

fn slot_of(g: &FactorGraph, a: usize, i: usize) -> Result<usize> {
    g.factor(a)
        .scope
        .iter()
        .position(|&v| v == i)
        .ok_or_else(|| Error::InvalidArgument(format!("variable {i} is not in the scope of factor {a}")))
}

/// Factor-to-variable message by enumerating the factor table (CP payloads
/// are expanded first). This is the reference path.
pub fn factor_to_var_dense(g: &FactorGraph, state: &MessageState, a: usize, i: usize, limits: &Limits) -> Result<Vec<f64>> {
    let slot = slot_of(g, a, i)?;
    let table = g.factor_table(a, limits)?;
    dense_message(&table, &incoming_messages(g, state, a), slot, a, i)
}

fn dense_message(table: &DenseTensor, incoming: &[&[f64]], slot: usize, a: usize, i: usize) -> Result<Vec<f64>> {
    let mut out = marginalize_product(table, incoming, slot)?;
    normalize_l1(&mut out).ok_or_else(|| Error::ZeroMessage { from: factor_label(a), to: var_label(i) })?;
    Ok(out)
}

/// Low-rank message from a CP factor given per-slot incoming messages.
/// Returns the normalized message and whether a sign violation occurred.
pub fn lowrank_message(f: &CpFactor, incoming: &[&[f64]], target: usize) -> (Vec<f64>, bool) {
    let rank = f.rank();
    let mut acc = vec![1.0; rank];
    let mut gamma = vec![0.0; rank];
    for (j, m) in incoming.iter().enumerate() {
        if j != target {
            project(f.weight(j), m, &mut gamma);
            acc.iter_mut().zip(&gamma).for_each(|(a, g)| *a *= g);
        }
    }
    let mut out = vec![0.0; f.cardinality()];
    back_project(f.weight(target), &acc, &mut out);
    let violated = out.iter().any(|&x| x < SIGN_SLACK);
    (out, violated)
}

/// Factor-to-variable message for a CP factor in `O(n * d * R)`.
pub fn factor_to_var_lowrank(g: &FactorGraph, state: &MessageState, a: usize, i: usize) -> Result<Vec<f64>> {
    let slot = slot_of(g, a, i)?;
    let Payload::LowRank(id) = g.factor(a).payload else {
        return Err(Error::InvalidArgument(format!("factor {a} has a dense payload")));
    };
    let (mut out, violated) = lowrank_message(g.param(id), &incoming_messages(g, state, a), slot);
    if violated {
        log::warn!("negative entries in low-rank message from factor {a} to variable {i}");
    }
    normalize_l1(&mut out).ok_or_else(|| Error::ZeroMessage { from: factor_label(a), to: var_label(i) })?;
    Ok(out)
}

/// All outgoing messages of one CP factor. Projections are computed once and
/// the leave-one-out products come from prefix/suffix products, so the whole
/// factor costs `O(n * d * R)`. Output is `n * d` values in slot order.
pub fn lowrank_sweep(f: &CpFactor, incoming: &[&[f64]], out: &mut [f64]) -> usize {
    let n = f.arity();
    let rank = f.rank();
    let d = f.cardinality();
    let mut gammas = vec![0.0; n * rank];
    for (j, m) in incoming.iter().enumerate() {
        project(f.weight(j), m, &mut gammas[j * rank..(j + 1) * rank]);
    }
    // suffix[j] = prod_{k >= j} gamma_k, with suffix[n] = 1
    let mut suffix = vec![1.0; (n + 1) * rank];
    for j in (0..n).rev() {
        for r in 0..rank {
            suffix[j * rank + r] = suffix[(j + 1) * rank + r] * gammas[j * rank + r];
        }
    }
    let mut prefix = vec![1.0; rank];
    let mut loo = vec![0.0; rank];
    let mut violations = 0;
    for i in 0..n {
        let after = &suffix[(i + 1) * rank..(i + 2) * rank];
        loo.iter_mut().zip(prefix.iter().zip(after)).for_each(|(l, (p, s))| *l = p * s);
        let msg = &mut out[i * d..(i + 1) * d];
        back_project(f.weight(i), &loo, msg);
        if msg.iter().any(|&x| x < SIGN_SLACK) {
            violations += 1;
        }
        prefix.iter_mut().zip(&gammas[i * rank..(i + 1) * rank]).for_each(|(p, g)| *p *= g);
    }
    violations
}

fn var_half_sweep(g: &FactorGraph, f2v: &[f64], next_v2f: &mut [f64], parallel: bool) -> Result<()> {
    par::try_fill_chunks(next_v2f, g.cardinality(), parallel, |e, out| var_message_into(g, f2v, e, out))
}

/// Recomputes every factor-to-variable message from `v2f`; returns the
/// number of sign violations.
fn factor_half_sweep(g: &FactorGraph, v2f: &[f64], next_f2v: &mut Vec<f64>, parallel: bool) -> Result<usize> {
    let d = g.cardinality();
    let per_factor = par::try_map_range(g.num_factors(), parallel, |a| -> Result<(Vec<f64>, usize)> {
        let f = g.factor(a);
        let edges = g.factor_edges(a);
        let incoming: Vec<&[f64]> = edges.clone().map(|e| &v2f[e * d..(e + 1) * d]).collect();
        let mut out = vec![0.0; edges.len() * d];
        let violations = match &f.payload {
            Payload::Dense(t) => {
                for slot in 0..f.arity() {
                    let m = marginalize_product(t, &incoming, slot)?;
                    out[slot * d..(slot + 1) * d].copy_from_slice(&m);
                }
                0
            }
            Payload::LowRank(id) => lowrank_sweep(g.param(*id), &incoming, &mut out),
        };
        for (slot, msg) in out.chunks_mut(d).enumerate() {
            normalize_l1(msg)
                .ok_or_else(|| Error::ZeroMessage { from: factor_label(a), to: var_label(f.scope[slot]) })?;
        }
        Ok((out, violations))
    })?;
    next_f2v.clear();
    let mut violations = 0;
    for (msgs, v) in per_factor {
        next_f2v.extend_from_slice(&msgs);
        violations += v;
    }
    Ok(violations)
}

/// `b_i ∝ f_i * prod_{a in N(i)} m_{a -> i}`, normalized.
pub fn beliefs(g: &FactorGraph, state: &MessageState) -> Result<Vec<Vec<f64>>> {
    let d = g.cardinality();
    (0..g.num_vars())
        .map(|i| {
            let mut b = g.unary_of(i).map_or_else(|| vec![1.0; d], |u| u.to_vec());
            for &e in g.var_edges(i) {
                b.iter_mut().zip(state.factor_to_var(e)).for_each(|(x, m)| *x *= m);
            }
            normalize_l1(&mut b).ok_or_else(|| Error::ZeroMessage { from: "all factors".into(), to: var_label(i) })?;
            Ok(b)
        })
        .collect()
}

/// Runs LBP from uniform messages.
pub fn run_lbp(g: &FactorGraph, opts: &LbpOptions) -> Result<BeliefSet> {
    run_lbp_from(g, init_messages(g), opts).map(|(b, _)| b)
}

/// Runs LBP from the given initial messages and returns the final state too.
pub fn run_lbp_from(g: &FactorGraph, mut state: MessageState, opts: &LbpOptions) -> Result<(BeliefSet, MessageState)> {
    opts.validate()?;
    if state.d != g.cardinality() || state.num_edges() != g.num_edges() {
        return Err(Error::Shape("message state does not match the graph".into()));
    }
    let Schedule::Flooding = opts.schedule;

    let mut next = state.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sign_warnings = 0;
    for iteration in 1..=opts.max_iters {
        var_half_sweep(g, &state.factor_to_var, &mut next.var_to_factor, opts.parallel)?;
        sign_warnings += factor_half_sweep(g, &next.var_to_factor, &mut next.factor_to_var, opts.parallel)?;
        if opts.damping > 0.0 {
            let lambda = opts.damping;
            let mix = |new: &mut [f64], old: &[f64]| {
                new.iter_mut().zip(old).for_each(|(n, o)| *n = (1.0 - lambda) * *n + lambda * o)
            };
            mix(&mut next.var_to_factor, &state.var_to_factor);
            mix(&mut next.factor_to_var, &state.factor_to_var);
        }
        if !next.all_finite() {
            return Err(Error::NonFinite { iteration, context: "message update".into() });
        }
        let delta = next.max_abs_diff(&state);
        std::mem::swap(&mut state, &mut next);
        trace.push(delta);
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    if sign_warnings > 0 {
        log::warn!("{sign_warnings} low-rank messages had negative entries; mixed-sign weights are not valid potentials");
    }

    let beliefs = beliefs(g, &state)?;
    let set = BeliefSet {
        beliefs,
        converged,
        iterations_used: trace.len(),
        final_delta: trace.last().copied(),
        sign_warnings,
        trace,
    };
    Ok((set, state))
}

/// Exact marginals by summing the full joint table.
pub fn exact_marginals(g: &FactorGraph, limits: &Limits) -> Result<BeliefSet> {
    let (joint, z) = g.joint_table(limits)?;
    let d = g.cardinality();
    let n = g.num_vars();
    let mut marginals = vec![vec![0.0; d]; n];
    let mut x = vec![0usize; n];
    for &p in joint.data() {
        for (i, &xi) in x.iter().enumerate() {
            marginals[i][xi] += p;
        }
        crate::tensor::next_index(&mut x, joint.shape());
    }
    for m in &mut marginals {
        m.iter_mut().for_each(|v| *v /= z);
    }
    Ok(BeliefSet {
        beliefs: marginals,
        converged: true,
        iterations_used: 0,
        final_delta: None,
        sign_warnings: 0,
        trace: Vec::new(),
    })
}
