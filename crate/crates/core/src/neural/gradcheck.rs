//! Central finite-difference check of the hand-written backward pass.
//!
//! The loss is `sum_i ||h_i^T||^2` after `T` stacked layers. Every parameter
//! value and every input state entry is perturbed by `±eps`.
//!
//! ReLU kinks: a coordinate is excluded when either perturbed forward pass
//! puts some MLP pre-activation on the other side of zero than the
//! unperturbed pass does. The loss is smooth along every remaining
//! coordinate's perturbation interval.
//!
//! Error metric: `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
//! with `floor = GRAD_FLOOR`, so gradients that are numerically zero are
//! compared absolutely.

use ndarray::Array2;

use super::layer::{backward_layers, forward_layers};
use super::params::{LayerParams, ParamSet};
use super::{HiddenStates, NeuralGraph};
use crate::error::Result;
use crate::par;
use crate::rng;

/// Denominator floor of the relative error.
pub const GRAD_FLOOR: f64 = 1e-5;
/// Perturbation size used by the CLI and the acceptance suite.
pub const DEFAULT_EPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates excluded because a perturbation crossed a ReLU kink.
    pub skipped: usize,
}

fn loss_and_mask(h0: &HiddenStates, g: &NeuralGraph, p: &LayerParams, layers: usize) -> Result<(f64, Vec<bool>)> {
    let (h, tapes) = forward_layers(h0, g, p, layers, false)?;
    let loss = h.values.iter().map(|x| x * x).sum();
    let mask = tapes.iter().flat_map(|t| t.pre_activations().iter().map(|&z| z > 0.0).collect::<Vec<_>>()).collect();
    Ok((loss, mask))
}

pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

enum Coord {
    Param { tensor: usize, index: usize },
    State { index: usize },
}

/// Checks gradients at random states `U[-1, 1]` drawn from `seed`, through
/// `layers` stacked layers.
pub fn grad_check(g: &NeuralGraph, p: &LayerParams, seed: u64, eps: f64, layers: usize) -> Result<GradCheckReport> {
    let mut r = rng::seeded(seed);
    let n = g.num_nodes();
    let d_h = p.d_h();
    let h0 = HiddenStates::new(Array2::from_shape_vec((n, d_h), rng::uniform_vec(&mut r, n * d_h, -1.0, 1.0)).unwrap());
    grad_check_at(g, p, &h0, eps, layers)
}

/// Same as [`grad_check`] at caller-supplied states.
pub fn grad_check_at(
    g: &NeuralGraph,
    p: &LayerParams,
    h0: &HiddenStates,
    eps: f64,
    layers: usize,
) -> Result<GradCheckReport> {
    let (h, tapes) = forward_layers(h0, g, p, layers, false)?;
    let upstream = h.values.mapv(|x| 2.0 * x);
    let grads = backward_layers(&tapes, g, p, &upstream)?;
    let (_, base_mask) = loss_and_mask(h0, g, p, layers)?;

    let analytic_params = grads.params.tensors();
    let mut coords = Vec::new();
    let mut names = Vec::new();
    for (t, (name, values)) in analytic_params.iter().enumerate() {
        for index in 0..values.len() {
            coords.push(Coord::Param { tensor: t, index });
            names.push(name.clone());
        }
    }
    for index in 0..h0.values.len() {
        coords.push(Coord::State { index });
        names.push("input_states".into());
    }

    let evaluate = |k: usize, delta: f64| -> Result<(f64, Vec<bool>)> {
        match coords[k] {
            Coord::Param { tensor, index } => {
                let mut q = p.clone();
                q.tensors_mut()[tensor][index] += delta;
                loss_and_mask(h0, g, &q, layers)
            }
            Coord::State { index } => {
                let mut h = h0.clone();
                h.values.as_slice_mut().unwrap()[index] += delta;
                loss_and_mask(&h, g, p, layers)
            }
        }
    };

    let results = par::try_map_range(coords.len(), true, |k| -> Result<Option<(f64, f64)>> {
        let (plus, mask_plus) = evaluate(k, eps)?;
        let (minus, mask_minus) = evaluate(k, -eps)?;
        if mask_plus != base_mask || mask_minus != base_mask {
            return Ok(None);
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = match coords[k] {
            Coord::Param { tensor, index } => analytic_params[tensor].1[index],
            Coord::State { index } => grads.states.as_slice().unwrap()[index],
        };
        Ok(Some((analytic, numeric)))
    })?;

    let mut report = GradCheckReport { max_relative_error: 0.0, worst: None, checked: 0, skipped: 0 };
    for (k, res) in results.into_iter().enumerate() {
        match res {
            None => report.skipped += 1,
            Some((a, n)) => {
                report.checked += 1;
                let err = relative_error(a, n);
                if err > report.max_relative_error || err.is_nan() {
                    report.max_relative_error = err;
                    let index = match coords[k] {
                        Coord::Param { index, .. } | Coord::State { index } => index,
                    };
                    report.worst = Some((names[k].clone(), index));
                }
            }
        }
    }
    Ok(report)
}
