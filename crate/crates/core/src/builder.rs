//! Factor-graph construction from typed graphs and sequences.
//!
//! Node-centered factors put one factor on every node, covering the node and
//! its neighbours. Each scope position is mapped to a slot key under a
//! [`SharingScheme`]; factors with equal keys share weights.
//!
//! Slot-key space per scheme, for `A` node types and `B` bond types:
//!
//! | scheme | center key          | neighbour key                 | size          |
//! |--------|---------------------|-------------------------------|---------------|
//! | CAT    | `(c)`               | `(c)`                         | `A`           |
//! | BT     | `(self)`            | `(b)`                         | `B + 1`       |
//! | CABT   | `(c, self)`         | `(c, b)`                      | `A (B + 1)`   |
//! | CABTA  | `(c, self)`         | `(c, b, n)`                   | `A B A + A`   |
//!
//! `c` is the center's type, `b` the bond to the neighbour, `n` the
//! neighbour's type. CABTA keys are directional: `(c, b, n)` and `(n, b, c)`
//! are different slots.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FactorBinding, FactorGraph, ParamId};
use crate::neural::NeuralGraph;
use crate::rng;
use crate::tensor::CpFactor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SharingScheme {
    Cat,
    Bt,
    Cabt,
    Cabta,
}

impl SharingScheme {
    pub const ALL: [SharingScheme; 4] = [SharingScheme::Cat, SharingScheme::Bt, SharingScheme::Cabt, SharingScheme::Cabta];
}

impl fmt::Display for SharingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SharingScheme::Cat => "CAT",
            SharingScheme::Bt => "BT",
            SharingScheme::Cabt => "CABT",
            SharingScheme::Cabta => "CABTA",
        })
    }
}

impl FromStr for SharingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CAT" => Ok(SharingScheme::Cat),
            "BT" => Ok(SharingScheme::Bt),
            "CABT" => Ok(SharingScheme::Cabt),
            "CABTA" => Ok(SharingScheme::Cabta),
            _ => Err(Error::InvalidArgument(format!("unknown sharing scheme `{s}` (expected CAT, BT, CABT or CABTA)"))),
        }
    }
}

/// Bond component of a slot key. The center position has no incident edge
/// and uses the reserved `SelfBond`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bond {
    Type(usize),
    SelfBond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotKey {
    Cat { center: usize },
    Bt { bond: Bond },
    Cabt { center: usize, bond: Bond },
    /// `neighbor` is `None` for the center position.
    Cabta { center: usize, bond: Bond, neighbor: Option<usize> },
}

impl SlotKey {
    pub fn new(scheme: SharingScheme, center: usize, bond: Bond, neighbor: Option<usize>) -> Self {
        match scheme {
            SharingScheme::Cat => SlotKey::Cat { center },
            SharingScheme::Bt => SlotKey::Bt { bond },
            SharingScheme::Cabt => SlotKey::Cabt { center, bond },
            SharingScheme::Cabta => SlotKey::Cabta { center, bond, neighbor },
        }
    }
}

impl fmt::Display for Bond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bond::Type(b) => write!(f, "b{b}"),
            Bond::SelfBond => f.write_str("self"),
        }
    }
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotKey::Cat { center } => write!(f, "cat:c{center}"),
            SlotKey::Bt { bond } => write!(f, "bt:{bond}"),
            SlotKey::Cabt { center, bond } => write!(f, "cabt:c{center}:{bond}"),
            SlotKey::Cabta { center, bond, neighbor: Some(n) } => write!(f, "cabta:c{center}:{bond}:n{n}"),
            SlotKey::Cabta { center, bond, neighbor: None } => write!(f, "cabta:c{center}:{bond}"),
        }
    }
}

/// Size of the slot-key space of `scheme` (see the module table).
pub fn slot_count(scheme: SharingScheme, num_atom_types: usize, num_bond_types: usize) -> usize {
    let (a, b) = (num_atom_types, num_bond_types);
    match scheme {
        SharingScheme::Cat => a,
        SharingScheme::Bt => b + 1,
        SharingScheme::Cabt => a * (b + 1),
        SharingScheme::Cabta => a * b * a + a,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedNode {
    #[serde(rename = "type")]
    pub node_type: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos3d: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedEdge {
    pub u: usize,
    pub v: usize,
    pub bond_type: usize,
}

/// Application graph with typed nodes and typed undirected edges.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedGraph {
    nodes: Vec<TypedNode>,
    edges: Vec<TypedEdge>,
    num_node_types: usize,
    num_bond_types: usize,
    /// `(neighbor, bond_type)` per node, ascending by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TypedGraphFile {
    nodes: Vec<TypedNode>,
    edges: Vec<TypedEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_node_types: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_bond_types: Option<usize>,
}

impl TypedGraph {
    /// Vocabulary sizes default to one more than the largest id in use.
    pub fn new(
        nodes: Vec<TypedNode>,
        edges: Vec<TypedEdge>,
        num_node_types: Option<usize>,
        num_bond_types: Option<usize>,
    ) -> Result<Self> {
        let num_node_types = num_node_types.unwrap_or_else(|| nodes.iter().map(|n| n.node_type + 1).max().unwrap_or(0));
        let num_bond_types = num_bond_types.unwrap_or_else(|| edges.iter().map(|e| e.bond_type + 1).max().unwrap_or(0));
        for (k, n) in nodes.iter().enumerate() {
            if n.node_type >= num_node_types {
                return Err(Error::InvalidArgument(format!(
                    "nodes[{k}].type = {} outside vocabulary of {num_node_types}",
                    n.node_type
                )));
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (k, e) in edges.iter().enumerate() {
            if e.u >= nodes.len() || e.v >= nodes.len() {
                return Err(Error::InvalidArgument(format!(
                    "edges[{k}] = ({}, {}) references a node outside 0..{}",
                    e.u,
                    e.v,
                    nodes.len()
                )));
            }
            if e.u == e.v {
                return Err(Error::InvalidArgument(format!("edges[{k}] is a self-loop on node {}", e.u)));
            }
            if e.bond_type >= num_bond_types {
                return Err(Error::InvalidArgument(format!(
                    "edges[{k}].bond_type = {} outside vocabulary of {num_bond_types}",
                    e.bond_type
                )));
            }
            if adjacency[e.u].iter().any(|&(n, _)| n == e.v) {
                return Err(Error::InvalidArgument(format!("edges[{k}] duplicates edge ({}, {})", e.u, e.v)));
            }
            adjacency[e.u].push((e.v, e.bond_type));
            adjacency[e.v].push((e.u, e.bond_type));
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        Ok(TypedGraph { nodes, edges, num_node_types, num_bond_types, adjacency })
    }

    /// Nodes typed `types[i]`, edges `(u, v, bond)`.
    pub fn from_types(types: &[usize], edges: &[(usize, usize, usize)]) -> Result<Self> {
        let nodes = types.iter().map(|&t| TypedNode { node_type: t, features: None, pos3d: None }).collect();
        let edges = edges.iter().map(|&(u, v, bond_type)| TypedEdge { u, v, bond_type }).collect();
        TypedGraph::new(nodes, edges, None, None)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[TypedNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[TypedEdge] {
        &self.edges
    }

    pub fn num_node_types(&self) -> usize {
        self.num_node_types
    }

    pub fn num_bond_types(&self) -> usize {
        self.num_bond_types
    }

    pub fn node_type(&self, i: usize) -> usize {
        self.nodes[i].node_type
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TypedGraphFile = serde_json::from_str(text)?;
        TypedGraph::new(f.nodes, f.edges, f.num_node_types, f.num_bond_types)
    }

    pub fn to_json(&self) -> Result<String> {
        let f = TypedGraphFile {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            num_node_types: Some(self.num_node_types),
            num_bond_types: Some(self.num_bond_types),
        };
        Ok(serde_json::to_string_pretty(&f)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        TypedGraph::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorSpec {
    pub scope: Vec<usize>,
    /// Index into the slot table for every scope position.
    pub slots: Vec<usize>,
}

/// Factor scopes with per-position slot keys, before any weights exist.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGraph {
    pub num_nodes: usize,
    pub rank: usize,
    pub factors: Vec<FactorSpec>,
    /// Distinct slot keys in first-use order.
    pub slot_table: Vec<String>,
}

#[derive(Default)]
struct Interner {
    table: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    fn intern(&mut self, key: String) -> usize {
        if let Some(&k) = self.index.get(&key) {
            return k;
        }
        self.table.push(key.clone());
        self.index.insert(key, self.table.len() - 1);
        self.table.len() - 1
    }
}

/// One factor per node over `[center, neighbours ascending]`. Isolated nodes
/// get an arity-1 factor.
pub fn build_node_centered(tg: &TypedGraph, scheme: SharingScheme, rank: usize) -> Result<StructuredGraph> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    let mut slots = Interner::default();
    let mut factors = Vec::with_capacity(tg.num_nodes());
    for i in 0..tg.num_nodes() {
        let c = tg.node_type(i);
        let mut scope = vec![i];
        let mut keys = vec![slots.intern(SlotKey::new(scheme, c, Bond::SelfBond, None).to_string())];
        for &(j, b) in tg.neighbors(i) {
            scope.push(j);
            keys.push(slots.intern(SlotKey::new(scheme, c, Bond::Type(b), Some(tg.node_type(j))).to_string()));
        }
        factors.push(FactorSpec { scope, slots: keys });
    }
    Ok(StructuredGraph { num_nodes: tg.num_nodes(), rank, factors, slot_table: slots.table })
}

/// One factor per position `p` over positions `max(0, p - k + 1) ..= p`.
/// With `shared`, factors of equal arity share slots position by position.
pub fn build_sequence(n: usize, k: usize, rank: usize, shared: bool) -> Result<StructuredGraph> {
    if n == 0 || k == 0 || rank == 0 {
        return Err(Error::InvalidArgument(format!("length, order and rank must be >= 1 (got {n}, {k}, {rank})")));
    }
    let mut slots = Interner::default();
    let factors = (0..n)
        .map(|p| {
            let scope: Vec<usize> = ((p + 1).saturating_sub(k)..=p).collect();
            let m = scope.len();
            let keys = (0..m)
                .map(|j| slots.intern(if shared { format!("order{m}/pos{j}") } else { format!("f{p}/pos{j}") }))
                .collect();
            FactorSpec { scope, slots: keys }
        })
        .collect();
    Ok(StructuredGraph { num_nodes: n, rank, factors, slot_table: slots.table })
}

impl StructuredGraph {
    pub fn arities(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.scope.len()).collect()
    }

    pub fn slot_keys_of(&self, a: usize) -> Vec<String> {
        self.factors[a].slots.iter().map(|&s| self.slot_table[s].clone()).collect()
    }

    pub fn to_neural_graph(&self) -> Result<NeuralGraph> {
        let factors = (0..self.factors.len()).map(|a| (self.factors[a].scope.clone(), self.slot_keys_of(a))).collect();
        NeuralGraph::new(self.num_nodes, factors)
    }

    /// Low-rank factor graph over `d` states. Every slot key gets one
    /// `d x R` matrix drawn `U[0, scale)` in slot-table order from `seed`;
    /// each distinct key tuple becomes one CP parameter stacked from those
    /// matrices, and bindings keep their slot keys.
    pub fn to_factor_graph(&self, d: usize, seed: u64, scale: f64) -> Result<FactorGraph> {
        if d < 2 {
            return Err(Error::InvalidArgument(format!("cardinality must be >= 2, got {d}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        let mut r = rng::seeded(seed);
        let matrices: Vec<Array2<f64>> = self
            .slot_table
            .iter()
            .map(|_| Array2::from_shape_vec((d, self.rank), rng::uniform_vec(&mut r, d * self.rank, 0.0, scale)).unwrap())
            .collect();
        let mut params: Vec<(String, CpFactor)> = Vec::new();
        let mut ids: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut bindings = Vec::with_capacity(self.factors.len());
        for (a, f) in self.factors.iter().enumerate() {
            let id = match ids.get(&f.slots) {
                Some(&id) => id,
                None => {
                    let cp = CpFactor::new(f.slots.iter().map(|&s| matrices[s].clone()).collect())?;
                    params.push((self.slot_keys_of(a).join("|"), cp));
                    ids.insert(f.slots.clone(), params.len() - 1);
                    params.len() - 1
                }
            };
            let mut b = FactorBinding::low_rank(f.scope.clone(), ParamId(id));
            b.slots = Some(self.slot_keys_of(a));
            bindings.push(b);
        }
        FactorGraph::build(self.num_nodes, d, bindings, None, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_count_examples() {
        assert_eq!(slot_count(SharingScheme::Cat, 5, 4), 5);
        assert_eq!(slot_count(SharingScheme::Bt, 5, 4), 5);
        assert_eq!(slot_count(SharingScheme::Cabt, 7, 4), 35);
        assert_eq!(slot_count(SharingScheme::Cabta, 2, 3), 14);
    }

    #[test]
    fn path_with_one_bond_type_under_bt() {
        let tg = TypedGraph::from_types(&[0, 1, 0], &[(0, 1, 0), (1, 2, 0)]).unwrap();
        let sg = build_node_centered(&tg, SharingScheme::Bt, 4).unwrap();
        assert_eq!(sg.slot_table, vec!["bt:self", "bt:b0"]);
        assert_eq!(sg.factors[1].scope, vec![1, 0, 2]);
    }

    #[test]
    fn star_under_cabta() {
        // C=0 at the center, N=1, O=2, F=3
        let tg = TypedGraph::from_types(&[0, 1, 2, 3], &[(0, 3, 0), (0, 1, 0), (2, 0, 0)]).unwrap();
        let sg = build_node_centered(&tg, SharingScheme::Cabta, 2).unwrap();
        let center = &sg.factors[0];
        assert_eq!(center.scope, vec![0, 1, 2, 3]);
        let mut non_center: Vec<usize> = center.slots[1..].to_vec();
        non_center.sort();
        non_center.dedup();
        assert_eq!(non_center.len(), 3);
    }

    #[test]
    fn isolated_node_gets_arity_one_factor() {
        let tg = TypedGraph::from_types(&[0, 0, 1], &[(0, 1, 0)]).unwrap();
        let sg = build_node_centered(&tg, SharingScheme::Cat, 2).unwrap();
        assert_eq!(sg.arities(), vec![2, 2, 1]);
    }

    #[test]
    fn sequence_windows() {
        assert_eq!(build_sequence(5, 1, 2, true).unwrap().arities(), vec![1; 5]);
        assert_eq!(build_sequence(5, 3, 2, true).unwrap().arities(), vec![1, 2, 3, 3, 3]);
        assert_eq!(build_sequence(1, 4, 2, true).unwrap().arities(), vec![1]);
        let s = build_sequence(5, 3, 2, true).unwrap();
        assert_eq!(s.factors[2].scope, vec![0, 1, 2]);
        assert_eq!(s.slot_table.len(), 1 + 2 + 3);
        assert_eq!(build_sequence(5, 3, 2, false).unwrap().slot_table.len(), 1 + 2 + 3 * 3);
    }

    #[test]
    fn invalid_typed_graphs() {
        assert!(TypedGraph::from_types(&[0, 1], &[(0, 2, 0)]).is_err());
        assert!(TypedGraph::from_types(&[0, 1], &[(1, 1, 0)]).is_err());
        assert!(TypedGraph::from_types(&[0, 1], &[(0, 1, 0), (1, 0, 0)]).is_err());
        let nodes = vec![TypedNode { node_type: 3, features: None, pos3d: None }];
        assert!(TypedGraph::new(nodes, vec![], Some(2), None).is_err());
    }

    #[test]
    fn factor_graph_shares_params_for_equal_key_tuples() {
        let tg = TypedGraph::from_types(&[0, 0, 0, 0], &[(0, 1, 0), (1, 2, 0), (2, 3, 0), (3, 0, 0)]).unwrap();
        let sg = build_node_centered(&tg, SharingScheme::Cat, 3).unwrap();
        let g = sg.to_factor_graph(3, 1, 1.0).unwrap();
        assert_eq!(g.params().len(), 1);
        let ng = NeuralGraph::from_factor_graph(&g).unwrap();
        assert_eq!(ng.slot_keys(), &["cat:c0".to_string()]);
    }

    #[test]
    fn typed_json_round_trip() {
        let text = r#"{"nodes":[{"type":1},{"type":0,"pos3d":[0.0,1.0,2.0]}],"edges":[{"u":0,"v":1,"bond_type":2}]}"#;
        let tg = TypedGraph::from_json(text).unwrap();
        assert_eq!(tg.num_bond_types(), 3);
        assert_eq!(TypedGraph::from_json(&tg.to_json().unwrap()).unwrap(), tg);
    }
}
