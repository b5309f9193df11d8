//! Graph-level regression training: `T` shared layers, mean readout,
//! absolute-error loss and Adam.

use ndarray::{Array1, Array2};

use super::layer::{backward_layers, forward_layers};
use super::params::{LayerParams, ParamSet};
use super::readout::Readout;
use super::{HiddenStates, NeuralGraph};
use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_LAYERS: usize = 3;
pub const DEFAULT_LR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Sample {
    pub graph: NeuralGraph,
    pub h0: Array2<f64>,
    pub target: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layer: LayerParams,
    pub readout: Readout,
    /// Number of stacked layers sharing `layer`.
    pub layers: usize,
}

impl Model {
    pub fn zeros_like(&self) -> Self {
        Model { layer: self.layer.zeros_like(), readout: self.readout.zeros_like(), layers: self.layers }
    }

    pub fn predict(&self, graph: &NeuralGraph, h0: &Array2<f64>) -> Result<Array1<f64>> {
        let (h, _) = forward_layers(&HiddenStates::new(h0.clone()), graph, &self.layer, self.layers, false)?;
        self.readout.forward(&h.values)
    }

    /// Absolute-error loss of one sample and its gradient.
    pub fn loss_and_grad(&self, s: &Sample) -> Result<(f64, Model)> {
        let (h, tapes) = forward_layers(&HiddenStates::new(s.h0.clone()), &s.graph, &self.layer, self.layers, false)?;
        let y = self.readout.forward(&h.values)?;
        if y.len() != s.target.len() {
            return Err(Error::Shape(format!("target has {} entries, readout emits {}", s.target.len(), y.len())));
        }
        let loss = y.iter().zip(&s.target).map(|(a, b)| (a - b).abs()).sum();
        let dy = Array1::from_iter(y.iter().zip(&s.target).map(|(a, b)| sign(a - b)));
        let (readout_grad, dh) = self.readout.backward(&h.values, &dy)?;
        let layer_grad = backward_layers(&tapes, &s.graph, &self.layer, &dh)?;
        Ok((loss, Model { layer: layer_grad.params, readout: readout_grad, layers: self.layers }))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl ParamSet for Model {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut t = self.layer.tensors();
        t.extend(self.readout.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.layer.tensors_mut();
        t.extend(self.readout.tensors_mut());
        t
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(num_values: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; num_values], v: vec![0.0; num_values] }
    }

    pub fn for_params(p: &impl ParamSet) -> Self {
        Adam::new(p.num_values())
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let n = params.num_values();
        if self.m.len() != n || self.v.len() != n {
            return Err(Error::Shape(format!("optimizer state holds {} values, model has {n}", self.m.len())));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let grads = grads.tensors();
        let mut k = 0;
        for (p, (_, g)) in params.tensors_mut().into_iter().zip(grads) {
            for (x, &gx) in p.iter_mut().zip(g) {
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gx;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gx * gx;
                let m_hat = self.m[k] / c1;
                let v_hat = self.v[k] / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + self.eps);
                k += 1;
            }
        }
        Ok(())
    }
}

pub(crate) fn add_into<P: ParamSet>(acc: &mut P, other: &P, scale: f64) {
    for (a, (_, b)) in acc.tensors_mut().into_iter().zip(other.tensors()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
    }
}

pub(crate) fn all_finite(p: &impl ParamSet) -> bool {
    p.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
}

/// Mean loss and gradient over a batch. Samples are evaluated in parallel
/// when requested; gradients are summed in sample order.
pub fn batch_loss_and_grad(batch: &[Sample], model: &Model, parallel: bool) -> Result<(f64, Model)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_sample = par::try_map_range(batch.len(), parallel, |k| model.loss_and_grad(&batch[k]))?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = model.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        add_into(&mut grad, g, scale);
    }
    Ok((loss * scale, grad))
}

/// One optimizer step. Returns the batch loss measured before the update.
/// A non-finite loss or gradient aborts the step with the model unchanged.
pub fn train_step(batch: &[Sample], model: &mut Model, opt: &mut Adam, lr: f64, parallel: bool) -> Result<f64> {
    let (loss, grad) = batch_loss_and_grad(batch, model, parallel)?;
    if !loss.is_finite() || !all_finite(&grad) {
        return Err(Error::NonFinite { iteration: opt.t as usize, context: "training loss".into() });
    }
    opt.step(model, &grad, lr)?;
    Ok(loss)
}
