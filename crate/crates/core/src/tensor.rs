//! Dense potential tables and CP-decomposed factors.
//!
//! Dense tensors are stored flat in row-major order (last axis fastest), so
//! entry `(i_1, .., i_m)` lives at `((i_1 * N_2 + i_2) * N_3 + ..) + i_m`.
//! A [`CpFactor`] stores one `d x R` weight matrix per variable slot; column
//! `r` of slot `j` is the `r`-th rank-one component for that slot, with any
//! component scale already multiplied into the weights.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Element-count cap used when a table would be materialized.
pub const DEFAULT_CAPACITY: usize = 10_000_000;

/// Environment variable overriding [`DEFAULT_CAPACITY`].
pub const CAPACITY_ENV: &str = "LRBP_CAPACITY";

/// Caps on the size of tables built by expansion or enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_elements: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_elements: DEFAULT_CAPACITY }
    }
}

impl Limits {
    /// Default limits, overridden by `LRBP_CAPACITY` when it parses.
    pub fn from_env() -> Self {
        match std::env::var(CAPACITY_ENV).ok().and_then(|v| v.trim().parse().ok()) {
            Some(max_elements) => Limits { max_elements },
            None => Limits::default(),
        }
    }

    /// Fails unless `base^exp` elements fit under the cap.
    pub fn check_pow(&self, base: usize, exp: usize) -> Result<usize> {
        let mut n: u128 = 1;
        for _ in 0..exp {
            n = n.saturating_mul(base as u128);
            if n > self.max_elements as u128 {
                return Err(Error::Capacity { requested: n, cap: self.max_elements });
            }
        }
        Ok(n as usize)
    }

    pub fn check_shape(&self, shape: &[usize]) -> Result<usize> {
        let mut n: u128 = 1;
        for &s in shape {
            n = n.saturating_mul(s as u128);
            if n > self.max_elements as u128 {
                return Err(Error::Capacity { requested: n, cap: self.max_elements });
            }
        }
        Ok(n as usize)
    }
}

/// An explicit potential table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseRepr", into = "DenseRepr")]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DenseRepr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<DenseRepr> for DenseTensor {
    type Error = Error;
    fn try_from(r: DenseRepr) -> Result<Self> {
        DenseTensor::new(r.shape, r.data)
    }
}

impl From<DenseTensor> for DenseRepr {
    fn from(t: DenseTensor) -> Self {
        DenseRepr { shape: t.shape, data: t.data }
    }
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Shape("tensor shape must be non-empty".into()));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!("axis cardinalities must be >= 1, got {shape:?}")));
        }
        let len = shape.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
        if len != Some(data.len()) {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = shape.iter().product();
        DenseTensor::new(shape, vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Common cardinality of every axis, if there is one.
    pub fn uniform_cardinality(&self) -> Option<usize> {
        let d = self.shape[0];
        self.shape.iter().all(|&s| s == d).then_some(d)
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &s)| acc * s + i)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Advances a row-major multi-index; returns `false` after the last entry.
pub(crate) fn next_index(index: &mut [usize], shape: &[usize]) -> bool {
    for axis in (0..index.len()).rev() {
        index[axis] += 1;
        if index[axis] < shape[axis] {
            return true;
        }
        index[axis] = 0;
    }
    false
}

/// A factor in CP form: `f(x_1..x_n) = sum_r prod_j W_j[x_j, r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CpRepr", into = "CpRepr")]
pub struct CpFactor {
    cardinality: usize,
    rank: usize,
    weights: Vec<Array2<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CpRepr {
    arity: usize,
    d: usize,
    rank: usize,
    /// `weights[j][x][r]`
    weights: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<CpRepr> for CpFactor {
    type Error = Error;
    fn try_from(r: CpRepr) -> Result<Self> {
        if r.weights.len() != r.arity {
            return Err(Error::Shape(format!(
                "cp factor declares arity {} but has {} weight matrices",
                r.arity,
                r.weights.len()
            )));
        }
        let mut weights = Vec::with_capacity(r.arity);
        for (j, rows) in r.weights.into_iter().enumerate() {
            if rows.len() != r.d || rows.iter().any(|row| row.len() != r.rank) {
                return Err(Error::Shape(format!(
                    "cp weight matrix {j} is not {} x {}",
                    r.d, r.rank
                )));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            weights.push(Array2::from_shape_vec((r.d, r.rank), flat).expect("checked shape"));
        }
        CpFactor::new(weights)
    }
}

impl From<CpFactor> for CpRepr {
    fn from(f: CpFactor) -> Self {
        CpRepr {
            arity: f.arity(),
            d: f.cardinality,
            rank: f.rank,
            weights: f
                .weights
                .iter()
                .map(|w| w.outer_iter().map(|row| row.to_vec()).collect())
                .collect(),
        }
    }
}

impl CpFactor {
    /// Builds a factor from per-slot `d x R` matrices.
    pub fn new(weights: Vec<Array2<f64>>) -> Result<Self> {
        let first = weights
            .first()
            .ok_or_else(|| Error::InvalidArgument("cp factor needs arity >= 1".into()))?;
        let (d, rank) = first.dim();
        if d < 2 {
            return Err(Error::InvalidArgument(format!("cardinality must be >= 2, got {d}")));
        }
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be >= 1".into()));
        }
        if let Some(j) = weights.iter().position(|w| w.dim() != (d, rank)) {
            return Err(Error::Unsupported(format!(
                "slot {j} weight matrix is {:?}, expected ({d}, {rank}); mixed cardinality factors are not supported",
                weights[j].dim()
            )));
        }
        Ok(CpFactor { cardinality: d, rank, weights })
    }

    pub fn arity(&self) -> usize {
        self.weights.len()
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weight(&self, slot: usize) -> &Array2<f64> {
        &self.weights[slot]
    }

    /// True when any weight is negative; such factors are not valid potentials.
    pub fn has_negative_weights(&self) -> bool {
        self.weights.iter().any(|w| w.iter().any(|&x| x < 0.0))
    }

    /// Random factor with entries i.i.d. `U[0, scale]`.
    pub fn random(arity: usize, d: usize, rank: usize, seed: u64, scale: f64) -> Result<Self> {
        if arity < 1 || d < 2 || rank < 1 {
            return Err(Error::InvalidArgument(format!(
                "need arity >= 1, d >= 2, rank >= 1 (got {arity}, {d}, {rank})"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        let mut rng = rng::seeded(seed);
        let weights = (0..arity)
            .map(|_| Array2::from_shape_simple_fn((d, rank), || rng.random_range(0.0..=scale)))
            .collect();
        CpFactor::new(weights)
    }

    /// Materializes the full `[d]^arity` table under the default limits.
    pub fn expand(&self) -> Result<DenseTensor> {
        self.expand_with(&Limits::from_env())
    }

    pub fn expand_with(&self, limits: &Limits) -> Result<DenseTensor> {
        let d = self.cardinality;
        let len = limits.check_pow(d, self.arity())?;
        let mut data = vec![0.0; len];
        let mut component = Vec::with_capacity(len);
        let mut scratch = Vec::with_capacity(len);
        for r in 0..self.rank {
            // rank-one tensor for component r, grown one axis at a time
            component.clear();
            component.extend(self.weights[0].column(r).iter().copied());
            for w in &self.weights[1..] {
                scratch.clear();
                let col = w.column(r);
                for &a in &component {
                    scratch.extend(col.iter().map(|&b| a * b));
                }
                std::mem::swap(&mut component, &mut scratch);
            }
            data.iter_mut().zip(&component).for_each(|(acc, v)| *acc += v);
        }
        DenseTensor::new(vec![d; self.arity()], data)
    }
}

/// `cp_random` under its operation name.
pub fn cp_random(arity: usize, d: usize, rank: usize, seed: u64, scale: f64) -> Result<CpFactor> {
    CpFactor::random(arity, d, rank, seed, scale)
}

/// `cp_expand` under its operation name.
pub fn cp_expand(f: &CpFactor) -> Result<DenseTensor> {
    f.expand()
}

/// Sums `t(X) * prod_{j != keep} m_j(x_j)` over every axis except `keep`.
///
/// `incoming` holds either one vector per axis (the entry at `keep` is
/// ignored) or one vector per axis other than `keep`, in axis order.
pub fn marginalize_product(t: &DenseTensor, incoming: &[&[f64]], keep: usize) -> Result<Vec<f64>> {
    let order = t.order();
    if keep >= order {
        return Err(Error::Shape(format!("keep axis {keep} out of range for order {order}")));
    }
    let msgs: Vec<&[f64]> = if incoming.len() == order {
        incoming.to_vec()
    } else if incoming.len() + 1 == order {
        let mut v = incoming.to_vec();
        v.insert(keep, &[]);
        v
    } else {
        return Err(Error::Shape(format!(
            "expected {} or {} incoming messages, got {}",
            order,
            order - 1,
            incoming.len()
        )));
    };
    for (axis, m) in msgs.iter().enumerate() {
        if axis != keep && m.len() != t.shape[axis] {
            return Err(Error::Shape(format!(
                "message for axis {axis} has length {}, axis cardinality is {}",
                m.len(),
                t.shape[axis]
            )));
        }
    }

    let mut out = vec![0.0; t.shape[keep]];
    let mut index = vec![0usize; order];
    for &value in &t.data {
        let mut w = value;
        for (axis, &i) in index.iter().enumerate() {
            if axis != keep {
                w *= msgs[axis][i];
            }
        }
        out[index[keep]] += w;
        next_index(&mut index, &t.shape);
    }
    Ok(out)
}

/// Divides `v` by its sum in place and returns the sum. Leaves `v` untouched
/// and returns `None` when the sum is zero or not finite.
pub fn normalize_l1(v: &mut [f64]) -> Option<f64> {
    let s: f64 = v.iter().sum();
    if s == 0.0 || !s.is_finite() {
        return None;
    }
    let inv = 1.0 / s;
    v.iter_mut().for_each(|x| *x *= inv);
    Some(s)
}
