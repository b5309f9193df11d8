//! Bipartite variable/factor graphs.
//!
//! Every variable takes values in `0..d`. A factor binds an ordered scope of
//! distinct variables to either a dense table or a CP parameter set stored
//! once in the graph's parameter table; position `k` of the scope binds slot
//! `k` of the CP weights. Several factors may reference the same parameter
//! set.
//!
//! Each (factor, scope position) pair is an *edge*. Edges are numbered
//! factor by factor, so the edges of factor `a` are the contiguous range
//! `edge_offsets[a]..edge_offsets[a + 1]`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{next_index, CpFactor, DenseTensor, Limits};

/// Index into a graph's parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dense(DenseTensor),
    LowRank(ParamId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorBinding {
    pub scope: Vec<usize>,
    pub payload: Payload,
    /// Optional per-position parameter slot keys, used by the neural layer to
    /// share weights at slot granularity.
    pub slots: Option<Vec<String>>,
}

impl FactorBinding {
    pub fn dense(scope: Vec<usize>, table: DenseTensor) -> Self {
        FactorBinding { scope, payload: Payload::Dense(table), slots: None }
    }

    pub fn low_rank(scope: Vec<usize>, param: ParamId) -> Self {
        FactorBinding { scope, payload: Payload::LowRank(param), slots: None }
    }

    pub fn arity(&self) -> usize {
        self.scope.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    num_vars: usize,
    cardinality: usize,
    factors: Vec<FactorBinding>,
    unary: Option<Vec<Vec<f64>>>,
    param_names: Vec<String>,
    params: Vec<CpFactor>,
    var_adjacency: Vec<Vec<usize>>,
    var_edges: Vec<Vec<usize>>,
    edge_offsets: Vec<usize>,
    edge_var: Vec<usize>,
    edge_factor: Vec<usize>,
}

impl FactorGraph {
    /// Validates the bindings and builds adjacency.
    ///
    /// `params` is the parameter table; `ParamId(k)` refers to its `k`-th
    /// entry.
    pub fn build(
        num_vars: usize,
        cardinality: usize,
        factors: Vec<FactorBinding>,
        unary: Option<Vec<Vec<f64>>>,
        params: Vec<(String, CpFactor)>,
    ) -> Result<Self> {
        if num_vars == 0 {
            return Err(Error::InvalidArgument("graph needs at least one variable".into()));
        }
        if cardinality < 2 {
            return Err(Error::InvalidArgument(format!("cardinality must be >= 2, got {cardinality}")));
        }
        if let Some(u) = &unary {
            if u.len() != num_vars {
                return Err(Error::Shape(format!("{} unary potentials for {num_vars} variables", u.len())));
            }
            for (i, f) in u.iter().enumerate() {
                if f.len() != cardinality {
                    return Err(Error::Shape(format!(
                        "unary potential of variable {i} has length {}, expected {cardinality}",
                        f.len()
                    )));
                }
                if f.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "unary potential of variable {i} must be finite and nonnegative"
                    )));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (name, p) in &params {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate parameter id `{name}`")));
            }
            if p.cardinality() != cardinality {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has cardinality {}, graph has {cardinality}",
                    p.cardinality()
                )));
            }
        }

        let mut var_adjacency = vec![Vec::new(); num_vars];
        let mut var_edges = vec![Vec::new(); num_vars];
        let mut edge_offsets = Vec::with_capacity(factors.len() + 1);
        let mut edge_var = Vec::new();
        let mut edge_factor = Vec::new();
        edge_offsets.push(0);
        for (a, f) in factors.iter().enumerate() {
            let invalid = |reason: String| Error::InvalidFactor { factor: a, reason };
            if f.scope.is_empty() {
                return Err(invalid("empty scope".into()));
            }
            for (k, &v) in f.scope.iter().enumerate() {
                if v >= num_vars {
                    return Err(invalid(format!("variable id {v} out of range (num_vars = {num_vars})")));
                }
                if f.scope[..k].contains(&v) {
                    return Err(invalid(format!("duplicate variable {v} in scope")));
                }
            }
            match &f.payload {
                Payload::Dense(t) => {
                    if t.shape().len() != f.arity() || t.shape().iter().any(|&s| s != cardinality) {
                        return Err(invalid(format!(
                            "dense payload shape {:?} does not match [{cardinality}]^{}",
                            t.shape(),
                            f.arity()
                        )));
                    }
                }
                Payload::LowRank(ParamId(p)) => {
                    let param = params
                        .get(*p)
                        .ok_or_else(|| invalid(format!("parameter index {p} out of range")))?;
                    if param.1.arity() != f.arity() {
                        return Err(invalid(format!(
                            "low-rank parameter `{}` has arity {}, scope has {}",
                            param.0,
                            param.1.arity(),
                            f.arity()
                        )));
                    }
                }
            }
            if let Some(slots) = &f.slots {
                if slots.len() != f.arity() {
                    return Err(invalid(format!("{} slot keys for arity {}", slots.len(), f.arity())));
                }
            }
            for &v in &f.scope {
                var_adjacency[v].push(a);
                var_edges[v].push(edge_var.len());
                edge_var.push(v);
                edge_factor.push(a);
            }
            edge_offsets.push(edge_var.len());
        }

        let (param_names, params) = params.into_iter().unzip();
        let g = FactorGraph {
            num_vars,
            cardinality,
            factors,
            unary,
            param_names,
            params,
            var_adjacency,
            var_edges,
            edge_offsets,
            edge_var,
            edge_factor,
        };
        debug_assert!(g.adjacency_is_transpose());
        Ok(g)
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn factors(&self) -> &[FactorBinding] {
        &self.factors
    }

    pub fn factor(&self, a: usize) -> &FactorBinding {
        &self.factors[a]
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn unary(&self) -> Option<&[Vec<f64>]> {
        self.unary.as_deref()
    }

    pub fn unary_of(&self, i: usize) -> Option<&[f64]> {
        self.unary.as_ref().map(|u| u[i].as_slice())
    }

    pub fn params(&self) -> &[CpFactor] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> &CpFactor {
        &self.params[id.0]
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.param_names[id.0]
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.param_names.iter().position(|n| n == name).map(ParamId)
    }

    /// Factors incident to variable `i`, in factor order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.var_adjacency[i]
    }

    /// Edge ids incident to variable `i`, parallel to [`Self::neighbors`].
    pub fn var_edges(&self, i: usize) -> &[usize] {
        &self.var_edges[i]
    }

    pub fn num_edges(&self) -> usize {
        self.edge_var.len()
    }

    pub fn factor_edges(&self, a: usize) -> std::ops::Range<usize> {
        self.edge_offsets[a]..self.edge_offsets[a + 1]
    }

    pub fn edge(&self, a: usize, slot: usize) -> usize {
        self.edge_offsets[a] + slot
    }

    pub fn edge_var(&self, e: usize) -> usize {
        self.edge_var[e]
    }

    pub fn edge_factor(&self, e: usize) -> usize {
        self.edge_factor[e]
    }

    pub fn edge_slot(&self, e: usize) -> usize {
        e - self.edge_offsets[self.edge_factor[e]]
    }

    /// Edge joining variable `i` and factor `a`, if `i` is in `a`'s scope.
    pub fn find_edge(&self, i: usize, a: usize) -> Option<usize> {
        let pos = self.var_adjacency.get(i)?.iter().position(|&b| b == a)?;
        Some(self.var_edges[i][pos])
    }

    /// `i in scope(a)  <=>  a in N(i)`, checked exhaustively.
    pub fn adjacency_is_transpose(&self) -> bool {
        for (a, f) in self.factors.iter().enumerate() {
            for i in 0..self.num_vars {
                if f.scope.contains(&i) != self.var_adjacency[i].contains(&a) {
                    return false;
                }
            }
        }
        true
    }

    /// Dense table of factor `a`, expanding a CP payload if needed.
    pub fn factor_table(&self, a: usize, limits: &Limits) -> Result<DenseTensor> {
        match &self.factors[a].payload {
            Payload::Dense(t) => Ok(t.clone()),
            Payload::LowRank(id) => self.params[id.0].expand_with(limits),
        }
    }

    /// Copy of the graph with every CP payload replaced by its expansion.
    pub fn to_dense(&self, limits: &Limits) -> Result<FactorGraph> {
        let factors = (0..self.factors.len())
            .map(|a| {
                Ok(FactorBinding {
                    scope: self.factors[a].scope.clone(),
                    payload: Payload::Dense(self.factor_table(a, limits)?),
                    slots: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FactorGraph::build(self.num_vars, self.cardinality, factors, self.unary.clone(), Vec::new())
    }

    /// Unnormalized joint over all variables and its total mass `Z`.
    pub fn joint_table(&self, limits: &Limits) -> Result<(DenseTensor, f64)> {
        let len = limits.check_pow(self.cardinality, self.num_vars)?;
        let tables = (0..self.factors.len())
            .map(|a| self.factor_table(a, limits))
            .collect::<Result<Vec<_>>>()?;
        let shape = vec![self.cardinality; self.num_vars];
        let mut data = Vec::with_capacity(len);
        let mut x = vec![0usize; self.num_vars];
        let mut local = Vec::new();
        loop {
            let mut p = 1.0;
            if let Some(u) = &self.unary {
                for (i, &xi) in x.iter().enumerate() {
                    p *= u[i][xi];
                }
            }
            for (f, t) in self.factors.iter().zip(&tables) {
                local.clear();
                local.extend(f.scope.iter().map(|&v| x[v]));
                p *= t.get(&local);
            }
            data.push(p);
            if !next_index(&mut x, &shape) {
                break;
            }
        }
        let z: f64 = data.iter().sum();
        if z == 0.0 {
            return Err(Error::ZeroMass);
        }
        if !z.is_finite() {
            return Err(Error::NonFinite { iteration: 0, context: "partition function".into() });
        }
        Ok((DenseTensor::new(shape, data)?, z))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        file.into_graph()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GraphFile::from_graph(self))?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        FactorGraph::from_json(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Chainable construction for hand-written graphs.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    num_vars: usize,
    cardinality: usize,
    factors: Vec<FactorBinding>,
    unary: Option<Vec<Vec<f64>>>,
    params: Vec<(String, CpFactor)>,
}

impl GraphBuilder {
    pub fn new(num_vars: usize, cardinality: usize) -> Self {
        GraphBuilder { num_vars, cardinality, factors: Vec::new(), unary: None, params: Vec::new() }
    }

    /// Sets the unary potential of variable `i`; others default to all-ones.
    pub fn unary(mut self, i: usize, potential: Vec<f64>) -> Self {
        let (n, d) = (self.num_vars, self.cardinality);
        let u = self.unary.get_or_insert_with(|| vec![vec![1.0; d]; n]);
        if i < u.len() {
            u[i] = potential;
        }
        self
    }

    pub fn dense(mut self, scope: Vec<usize>, table: DenseTensor) -> Self {
        self.factors.push(FactorBinding::dense(scope, table));
        self
    }

    /// Registers a parameter set (or reuses one with the same name) and binds it.
    pub fn low_rank(mut self, scope: Vec<usize>, name: &str, factor: CpFactor) -> Self {
        let id = match self.params.iter().position(|(n, _)| n == name) {
            Some(p) => p,
            None => {
                self.params.push((name.to_string(), factor));
                self.params.len() - 1
            }
        };
        self.factors.push(FactorBinding::low_rank(scope, ParamId(id)));
        self
    }

    pub fn binding(mut self, binding: FactorBinding) -> Self {
        self.factors.push(binding);
        self
    }

    pub fn param(mut self, name: &str, factor: CpFactor) -> Self {
        self.params.push((name.to_string(), factor));
        self
    }

    pub fn build(self) -> Result<FactorGraph> {
        FactorGraph::build(self.num_vars, self.cardinality, self.factors, self.unary, self.params)
    }
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    num_vars: usize,
    cardinality: usize,
    unary: Option<Vec<Vec<f64>>>,
    factors: Vec<FactorFile>,
    #[serde(default)]
    params: BTreeMap<String, CpFactor>,
}

#[derive(Serialize, Deserialize)]
struct FactorFile {
    scope: Vec<usize>,
    payload: PayloadFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slots: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum PayloadFile {
    Dense { shape: Vec<usize>, data: Vec<f64> },
    Lowrank { param_id: String },
}

impl GraphFile {
    fn from_graph(g: &FactorGraph) -> Self {
        let factors = g
            .factors
            .iter()
            .map(|f| FactorFile {
                scope: f.scope.clone(),
                payload: match &f.payload {
                    Payload::Dense(t) => PayloadFile::Dense { shape: t.shape().to_vec(), data: t.data().to_vec() },
                    Payload::LowRank(id) => PayloadFile::Lowrank { param_id: g.param_names[id.0].clone() },
                },
                slots: f.slots.clone(),
            })
            .collect();
        GraphFile {
            num_vars: g.num_vars,
            cardinality: g.cardinality,
            unary: g.unary.clone(),
            factors,
            params: g.param_names.iter().cloned().zip(g.params.iter().cloned()).collect(),
        }
    }

    fn into_graph(self) -> Result<FactorGraph> {
        let names: Vec<String> = self.params.keys().cloned().collect();
        let factors = self
            .factors
            .into_iter()
            .enumerate()
            .map(|(a, f)| {
                let payload = match f.payload {
                    PayloadFile::Dense { shape, data } => Payload::Dense(
                        DenseTensor::new(shape, data)
                            .map_err(|e| Error::Format(format!("factors[{a}].payload: {e}")))?,
                    ),
                    PayloadFile::Lowrank { param_id } => {
                        let p = names.iter().position(|n| *n == param_id).ok_or_else(|| {
                            Error::Format(format!("factors[{a}].payload.param_id: unknown parameter `{param_id}`"))
                        })?;
                        Payload::LowRank(ParamId(p))
                    }
                };
                Ok(FactorBinding { scope: f.scope, payload, slots: f.slots })
            })
            .collect::<Result<Vec<_>>>()?;
        FactorGraph::build(self.num_vars, self.cardinality, factors, self.unary, self.params.into_iter().collect())
    }
}
