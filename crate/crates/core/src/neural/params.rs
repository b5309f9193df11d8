use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

/// A flat view over every trainable tensor of a parameter container, in a
/// fixed order. Optimizers and the gradient checker walk this list.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn uniform_matrix(rng: &mut SeededRng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

pub(crate) fn uniform_vector(rng: &mut SeededRng, n: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.random_range(-bound..bound))
}

/// The doubled weight pair of one parameter slot. `w_in` projects a sender's
/// state into rank space before the Hadamard product, `w_out` maps the
/// product back for the receiver. Both are `d_h x R`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotWeights {
    pub w_in: Array2<f64>,
    pub w_out: Array2<f64>,
}

/// One-hidden-layer ReLU MLP, `d_h -> hidden -> d_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Mlp {
    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    fn zeros(d_h: usize, hidden: usize) -> Self {
        Mlp {
            w1: Array2::zeros((hidden, d_h)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((d_h, hidden)),
            b2: Array1::zeros(d_h),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    d_h: usize,
    rank: usize,
    slot_keys: Vec<String>,
    slot_lookup: HashMap<String, usize>,
    pub slots: Vec<SlotWeights>,
    pub mlp: Mlp,
}

impl LayerParams {
    /// Random initialization. Slot matrices are `U[-1/sqrt(R), 1/sqrt(R)]`,
    /// MLP weights and biases `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(slot_keys: &[String], d_h: usize, rank: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut p = LayerParams::zeros(slot_keys, d_h, rank, hidden)?;
        let mut rng = rng::seeded(seed);
        let b = 1.0 / (rank as f64).sqrt();
        for s in &mut p.slots {
            s.w_in = uniform_matrix(&mut rng, d_h, rank, b);
            s.w_out = uniform_matrix(&mut rng, d_h, rank, b);
        }
        let b1 = 1.0 / (d_h as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        p.mlp = Mlp {
            w1: uniform_matrix(&mut rng, hidden, d_h, b1),
            b1: uniform_vector(&mut rng, hidden, b1),
            w2: uniform_matrix(&mut rng, d_h, hidden, b2),
            b2: uniform_vector(&mut rng, d_h, b2),
        };
        Ok(p)
    }

    /// All-zero parameters; hidden width defaults to `2 * d_h` elsewhere.
    pub fn zeros(slot_keys: &[String], d_h: usize, rank: usize, hidden: usize) -> Result<Self> {
        if d_h == 0 || rank == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "d_h, rank and hidden width must be positive (got {d_h}, {rank}, {hidden})"
            )));
        }
        let mut slot_lookup = HashMap::new();
        for (k, key) in slot_keys.iter().enumerate() {
            if slot_lookup.insert(key.clone(), k).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate slot key `{key}`")));
            }
        }
        let slots = slot_keys
            .iter()
            .map(|_| SlotWeights { w_in: Array2::zeros((d_h, rank)), w_out: Array2::zeros((d_h, rank)) })
            .collect();
        Ok(LayerParams { d_h, rank, slot_keys: slot_keys.to_vec(), slot_lookup, slots, mlp: Mlp::zeros(d_h, hidden) })
    }

    pub fn zeros_like(&self) -> Self {
        LayerParams::zeros(&self.slot_keys, self.d_h, self.rank, self.mlp.hidden()).expect("valid shape")
    }

    pub fn d_h(&self) -> usize {
        self.d_h
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn slot_keys(&self) -> &[String] {
        &self.slot_keys
    }

    pub fn slot_index(&self, key: &str) -> Option<usize> {
        self.slot_lookup.get(key).copied()
    }

    pub fn slot(&self, key: &str) -> Option<&SlotWeights> {
        self.slot_index(key).map(|k| &self.slots[k])
    }

    /// Checks that every matrix has the shape implied by `d_h`, `R` and the
    /// MLP width.
    pub fn validate(&self) -> Result<()> {
        let (d, r, h) = (self.d_h, self.rank, self.mlp.hidden());
        for (k, s) in self.slots.iter().enumerate() {
            if s.w_in.dim() != (d, r) || s.w_out.dim() != (d, r) {
                return Err(Error::Shape(format!("slot `{}` matrices must be {d} x {r}", self.slot_keys[k])));
            }
        }
        if self.slots.len() != self.slot_keys.len() {
            return Err(Error::Shape("slot table and slot keys differ in length".into()));
        }
        let m = &self.mlp;
        if m.w1.dim() != (h, d) || m.w2.dim() != (d, h) || m.b2.len() != d {
            return Err(Error::Shape(format!("mlp shapes inconsistent with d_h = {d}, hidden = {h}")));
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &LayerParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b.1).for_each(|(x, y)| *x += y);
        }
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

impl ParamSet for LayerParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.slots.len() + 4);
        for (key, s) in self.slot_keys.iter().zip(&self.slots) {
            out.push((format!("slot[{key}].w_in"), slice(&s.w_in)));
            out.push((format!("slot[{key}].w_out"), slice(&s.w_out)));
        }
        out.push(("mlp.w1".into(), slice(&self.mlp.w1)));
        out.push(("mlp.b1".into(), self.mlp.b1.as_slice().unwrap()));
        out.push(("mlp.w2".into(), slice(&self.mlp.w2)));
        out.push(("mlp.b2".into(), self.mlp.b2.as_slice().unwrap()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.slots.len() + 4);
        for s in &mut self.slots {
            out.push(slice_mut(&mut s.w_in));
            out.push(slice_mut(&mut s.w_out));
        }
        let m = &mut self.mlp;
        out.push(slice_mut(&mut m.w1));
        out.push(m.b1.as_slice_mut().unwrap());
        out.push(slice_mut(&mut m.w2));
        out.push(m.b2.as_slice_mut().unwrap());
        out
    }
}

/// Gradients of a scalar loss: parameter-shaped plus one row per input node.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub params: LayerParams,
    pub states: Array2<f64>,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.params.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
            && self.states.iter().all(|x| x.is_finite())
    }
}
