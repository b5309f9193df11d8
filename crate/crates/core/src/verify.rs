//! Oracle checks run by `lrbp verify`.

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{FactorGraph, Payload};
use crate::lbp::{exact_marginals, lowrank_message, run_lbp, LbpOptions};
use crate::rng;
use crate::tensor::{marginalize_product, Limits};

pub const MESSAGE_TOL: f64 = 1e-10;
pub const BELIEF_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Passed { deviation: f64, tol: f64 },
    Failed { deviation: f64, tol: f64 },
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub outcome: Outcome,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.outcome {
            Outcome::Passed { deviation, tol } => write!(f, "PASS {}: max deviation {deviation:e} (tol {tol:e})", self.name),
            Outcome::Failed { deviation, tol } => write!(f, "FAIL {}: max deviation {deviation:e} (tol {tol:e})", self.name),
            Outcome::Skipped(why) => write!(f, "SKIP {}: {why}", self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    /// True when no executed check failed.
    pub fn passed(&self) -> bool {
        !self.checks.iter().any(|c| matches!(c.outcome, Outcome::Failed { .. }))
    }

    pub fn skipped(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| matches!(c.outcome, Outcome::Skipped(_)))
    }
}

fn judge(deviation: f64, tol: f64) -> Outcome {
    if deviation <= tol {
        Outcome::Passed { deviation, tol }
    } else {
        Outcome::Failed { deviation, tol }
    }
}

fn skip_on_capacity<T>(r: Result<T>) -> Result<std::result::Result<T, String>> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e @ Error::Capacity { .. }) => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

/// Worst relative deviation, over every low-rank factor and target slot,
/// between the low-rank message and marginalization of the expanded table
/// under random positive incoming messages. Messages are compared
/// unnormalized; the deviation is `max_x |l - d| / max_x |d|`.
pub fn lowrank_message_deviation(g: &FactorGraph, seed: u64, limits: &Limits) -> Result<Option<f64>> {
    let mut r = rng::seeded(seed);
    let mut worst: Option<f64> = None;
    for a in 0..g.num_factors() {
        let Payload::LowRank(id) = g.factor(a).payload else { continue };
        let f = g.param(id);
        let table = f.expand_with(limits)?;
        let msgs: Vec<Vec<f64>> = (0..f.arity()).map(|_| rng::positive_message(&mut r, f.cardinality())).collect();
        let incoming: Vec<&[f64]> = msgs.iter().map(|m| m.as_slice()).collect();
        for slot in 0..f.arity() {
            let (low, _) = lowrank_message(f, &incoming, slot);
            let dense = marginalize_product(&table, &incoming, slot)?;
            let scale = dense.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let dev = low.iter().zip(&dense).fold(0.0f64, |m, (l, d)| m.max((l - d).abs()));
            let rel = if scale > 0.0 { dev / scale } else { dev };
            worst = Some(worst.map_or(rel, |w| w.max(rel)));
        }
    }
    Ok(worst)
}

/// True when the variable/factor graph has no cycles.
pub fn is_forest(g: &FactorGraph) -> bool {
    let n = g.num_vars() + g.num_factors();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for a in 0..g.num_factors() {
        for &i in &g.factor(a).scope {
            let (u, v) = (find(&mut parent, i), find(&mut parent, g.num_vars() + a));
            if u == v {
                return false;
            }
            parent[u] = v;
        }
    }
    true
}

pub fn verify(g: &FactorGraph, opts: &LbpOptions, seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();

    let has_lowrank = g.factors().iter().any(|f| matches!(f.payload, Payload::LowRank(_)));
    let outcome = if !has_lowrank {
        Outcome::Skipped("graph has no low-rank factors".into())
    } else {
        match skip_on_capacity(lowrank_message_deviation(g, seed, &opts.limits))? {
            Ok(dev) => judge(dev.unwrap_or(0.0), MESSAGE_TOL),
            Err(why) => Outcome::Skipped(format!("expansion exceeds capacity: {why}")),
        }
    };
    checks.push(Check { name: "lowrank_messages", outcome });

    let outcome = if !is_forest(g) {
        Outcome::Skipped("graph has cycles; LBP is not exact".into())
    } else {
        match skip_on_capacity(exact_marginals(g, &opts.limits))? {
            Err(why) => Outcome::Skipped(format!("enumeration exceeds capacity: {why}")),
            Ok(exact) => {
                let lbp = run_lbp(g, opts)?;
                if lbp.converged {
                    judge(lbp.max_abs_diff(&exact), BELIEF_TOL)
                } else {
                    Outcome::Failed { deviation: lbp.max_abs_diff(&exact), tol: BELIEF_TOL }
                }
            }
        }
    };
    checks.push(Check { name: "tree_beliefs", outcome });
    Ok(VerifyReport { checks })
}
