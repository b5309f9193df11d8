//! Neuralized low-rank message passing.
//!
//! Node states are unconstrained real vectors `h_i` of width `d_h`. One layer
//! computes, for every node,
//!
//! ```text
//! h_i' = h_i + MLP( sum_{a in N(i)} W_out[a,i] ( ⊙_{j in N(a) \ i} W_in[a,j]^T h_j ) )
//! ```
//!
//! where `W_in`/`W_out` are `d_h x R` matrices looked up through the
//! factor's per-position slot keys, so factors can share weights. The MLP has
//! one ReLU hidden layer. Every operation has a hand-written backward pass;
//! [`gradcheck`] compares it against central differences.

pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod params;
pub mod readout;
pub mod train;

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{FactorGraph, Payload};

pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_EPS};
pub use layer::{lrbp_backward, lrbp_forward, Tape};
pub use params::{GradientBundle, LayerParams, Mlp, SlotWeights};
pub use readout::Readout;
pub use checkpoint::Checkpoint;
pub use train::{train_step, Adam, Model, Sample};

/// Per-node hidden vectors, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub values: Array2<f64>,
    /// Number of layers applied since the initial states.
    pub t: usize,
}

impl HiddenStates {
    pub fn new(values: Array2<f64>) -> Self {
        HiddenStates { values, t: 0 }
    }

    pub fn num_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralFactor {
    pub scope: Vec<usize>,
    /// Index into [`NeuralGraph::slot_keys`] for every scope position.
    pub slots: Vec<usize>,
}

/// Factor structure seen by the neural layer: scopes plus per-position slot
/// keys. Edges are numbered factor by factor as in [`FactorGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralGraph {
    num_nodes: usize,
    factors: Vec<NeuralFactor>,
    slot_keys: Vec<String>,
    edge_offsets: Vec<usize>,
    /// `(factor, position)` of every edge incident to a node, in factor order.
    node_edges: Vec<Vec<usize>>,
}

impl NeuralGraph {
    /// Builds from `(scope, slot keys)` pairs. Slot keys are interned in
    /// first-seen order.
    pub fn new(num_nodes: usize, factors: Vec<(Vec<usize>, Vec<String>)>) -> Result<Self> {
        let mut slot_keys: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut out = Vec::with_capacity(factors.len());
        let mut edge_offsets = vec![0];
        let mut node_edges = vec![Vec::new(); num_nodes];
        for (a, (scope, keys)) in factors.into_iter().enumerate() {
            let invalid = |reason: String| Error::InvalidFactor { factor: a, reason };
            if scope.is_empty() {
                return Err(invalid("empty scope".into()));
            }
            if keys.len() != scope.len() {
                return Err(invalid(format!("{} slot keys for arity {}", keys.len(), scope.len())));
            }
            for (k, &v) in scope.iter().enumerate() {
                if v >= num_nodes {
                    return Err(invalid(format!("node {v} out of range (num_nodes = {num_nodes})")));
                }
                if scope[..k].contains(&v) {
                    return Err(invalid(format!("duplicate node {v} in scope")));
                }
            }
            let base = *edge_offsets.last().unwrap();
            for (k, &v) in scope.iter().enumerate() {
                node_edges[v].push(base + k);
            }
            let slots = keys
                .into_iter()
                .map(|key| {
                    *index.entry(key.clone()).or_insert_with(|| {
                        slot_keys.push(key);
                        slot_keys.len() - 1
                    })
                })
                .collect();
            edge_offsets.push(base + scope.len());
            out.push(NeuralFactor { scope, slots });
        }
        Ok(NeuralGraph { num_nodes, factors: out, slot_keys, edge_offsets, node_edges })
    }

    /// Uses the factor graph's structure. Positions take the binding's slot
    /// keys when present, otherwise `"<param_id>#<position>"`.
    pub fn from_factor_graph(g: &FactorGraph) -> Result<Self> {
        let factors = g
            .factors()
            .iter()
            .enumerate()
            .map(|(a, f)| {
                let Payload::LowRank(id) = f.payload else {
                    return Err(Error::InvalidFactor {
                        factor: a,
                        reason: "the neural layer needs low-rank payloads".into(),
                    });
                };
                let keys = match &f.slots {
                    Some(keys) => keys.clone(),
                    None => (0..f.arity()).map(|k| format!("{}#{k}", g.param_name(id))).collect(),
                };
                Ok((f.scope.clone(), keys))
            })
            .collect::<Result<Vec<_>>>()?;
        NeuralGraph::new(g.num_vars(), factors)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn factors(&self) -> &[NeuralFactor] {
        &self.factors
    }

    pub fn slot_keys(&self) -> &[String] {
        &self.slot_keys
    }

    pub fn num_edges(&self) -> usize {
        *self.edge_offsets.last().unwrap()
    }

    pub fn factor_edges(&self, a: usize) -> std::ops::Range<usize> {
        self.edge_offsets[a]..self.edge_offsets[a + 1]
    }

    pub fn node_edges(&self, i: usize) -> &[usize] {
        &self.node_edges[i]
    }

    /// Maps every graph slot to a parameter slot index.
    pub(crate) fn resolve_slots(&self, params: &LayerParams) -> Result<Vec<usize>> {
        self.slot_keys
            .iter()
            .map(|k| params.slot_index(k).ok_or_else(|| Error::UnmappedSlot(k.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::tensor::CpFactor;

    #[test]
    fn slot_keys_are_interned() {
        let g = NeuralGraph::new(
            3,
            vec![
                (vec![0, 1], vec!["a".into(), "b".into()]),
                (vec![1, 2], vec!["a".into(), "c".into()]),
            ],
        )
        .unwrap();
        assert_eq!(g.slot_keys(), &["a", "b", "c"]);
        assert_eq!(g.factors()[1].slots, vec![0, 2]);
        assert_eq!(g.node_edges(1), &[1, 2]);
    }

    #[test]
    fn from_factor_graph_keys_by_param_and_position() {
        let cp = CpFactor::random(2, 2, 3, 0, 1.0).unwrap();
        let fg = GraphBuilder::new(3, 2)
            .low_rank(vec![0, 1], "p", cp.clone())
            .low_rank(vec![1, 2], "p", cp)
            .build()
            .unwrap();
        let g = NeuralGraph::from_factor_graph(&fg).unwrap();
        assert_eq!(g.slot_keys(), &["p#0", "p#1"]);
    }

    #[test]
    fn dense_payloads_rejected() {
        let fg = GraphBuilder::new(2, 2)
            .dense(vec![0, 1], crate::tensor::DenseTensor::filled(vec![2, 2], 1.0).unwrap())
            .build()
            .unwrap();
        assert!(NeuralGraph::from_factor_graph(&fg).is_err());
    }
}
