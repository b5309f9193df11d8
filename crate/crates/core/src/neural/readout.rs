//! Graph-level readout: mean over node states followed by one affine map.

use std::ops::Range;

use ndarray::{Array1, Array2, Axis};

use super::params::{uniform_matrix, uniform_vector, ParamSet};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    /// `out x d_h`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Readout {
    pub fn init(d_h: usize, out: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let bound = 1.0 / (d_h as f64).sqrt();
        Readout { w: uniform_matrix(&mut rng, out, d_h, bound), b: uniform_vector(&mut rng, out, bound) }
    }

    pub fn zeros_like(&self) -> Self {
        Readout { w: Array2::zeros(self.w.dim()), b: Array1::zeros(self.b.len()) }
    }

    pub fn out_dim(&self) -> usize {
        self.b.len()
    }

    /// Embedding of the whole node set.
    pub fn forward(&self, h: &Array2<f64>) -> Result<Array1<f64>> {
        let mean = sorted_mean(h)?;
        if mean.len() != self.w.ncols() {
            return Err(Error::Shape(format!("states have width {}, readout expects {}", mean.len(), self.w.ncols())));
        }
        Ok(self.w.dot(&mean) + &self.b)
    }

    /// One embedding per node range, for disjoint graphs stacked row-wise.
    pub fn forward_segments(&self, h: &Array2<f64>, segments: &[Range<usize>]) -> Result<Vec<Array1<f64>>> {
        segments
            .iter()
            .map(|s| {
                if s.end > h.nrows() {
                    return Err(Error::Shape(format!("segment {s:?} exceeds {} nodes", h.nrows())));
                }
                self.forward(&h.slice(ndarray::s![s.clone(), ..]).to_owned())
            })
            .collect()
    }

    /// Gradients for upstream `dL/dy`: parameter gradients and `dL/dh`.
    pub fn backward(&self, h: &Array2<f64>, dy: &Array1<f64>) -> Result<(Readout, Array2<f64>)> {
        let n = h.nrows();
        let mean = sorted_mean(h)?;
        let dw = Array2::from_shape_fn(self.w.dim(), |(o, x)| dy[o] * mean[x]);
        let dmean = self.w.t().dot(dy) / n as f64;
        let dh = Array2::from_shape_fn(h.dim(), |(_, x)| dmean[x]);
        Ok((Readout { w: dw, b: dy.clone() }, dh))
    }
}

/// Column means with each column summed in sorted order, so the result does
/// not depend on node order, bit for bit.
fn sorted_mean(h: &Array2<f64>) -> Result<Array1<f64>> {
    let n = h.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("readout of an empty graph".into()));
    }
    let mut column = Vec::with_capacity(n);
    Ok(h.axis_iter(Axis(1))
        .map(|c| {
            column.clear();
            column.extend(c.iter().copied());
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n as f64
        })
        .collect())
}

impl ParamSet for Readout {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("readout.w".into(), self.w.as_slice().unwrap()),
            ("readout.b".into(), self.b.as_slice().unwrap()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, concatenate};

    #[test]
    fn identical_nodes_give_affine_of_that_state() {
        let r = Readout::init(3, 2, 1);
        let s = array![0.5, -1.0, 2.0];
        let h = Array2::from_shape_fn((4, 3), |(_, x)| s[x]);
        let y = r.forward(&h).unwrap();
        let want = r.w.dot(&s) + &r.b;
        for k in 0..2 {
            assert!((y[k] - want[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn node_permutation_is_bitwise_invariant() {
        let r = Readout::init(2, 3, 0);
        let h = array![[0.1, 2.0], [3.0, -4.0], [1e-17, 0.3], [-0.7, 1e16], [0.2, -0.1]];
        let a = r.forward(&h).unwrap();
        for perm in [[4, 3, 2, 1, 0], [1, 0, 3, 4, 2], [2, 4, 0, 1, 3]] {
            let p = h.select(Axis(0), &perm);
            let b = r.forward(&p).unwrap();
            for k in 0..3 {
                assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }

    #[test]
    fn batched_segments_match_separate_graphs() {
        let r = Readout::init(2, 2, 3);
        let g1 = array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]];
        let g2 = array![[-1.0, 5.0]];
        let both = concatenate![Axis(0), g1, g2];
        let seg = r.forward_segments(&both, &[0..3, 3..4]).unwrap();
        assert_eq!(seg[0], r.forward(&g1).unwrap());
        assert_eq!(seg[1], r.forward(&g2).unwrap());
    }

    #[test]
    fn empty_graph_is_an_error() {
        let r = Readout::init(2, 2, 3);
        assert!(r.forward(&Array2::zeros((0, 2))).is_err());
    }
}
