//! JSON checkpoints of a model and its optimizer state.
//!
//! Tensors are stored flat, row-major, under the names reported by
//! [`ParamSet::tensors`]. Floats round-trip exactly.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::params::{LayerParams, ParamSet};
use super::readout::Readout;
use super::train::{Adam, Model};
use crate::error::{Error, Result};

const FORMAT: &str = "lrbp-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamFile {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    d_h: usize,
    rank: usize,
    hidden: usize,
    layers: usize,
    readout_out: usize,
    slot_keys: Vec<String>,
    tensors: Vec<NamedTensor>,
    optimizer: Option<AdamFile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let p = &self.model.layer;
        let file = CheckpointFile {
            format: FORMAT.into(),
            version: VERSION,
            d_h: p.d_h(),
            rank: p.rank(),
            hidden: p.mlp.hidden(),
            layers: self.model.layers,
            readout_out: self.model.readout.out_dim(),
            slot_keys: p.slot_keys().to_vec(),
            tensors: self
                .model
                .tensors()
                .into_iter()
                .map(|(name, v)| NamedTensor { name, values: v.to_vec() })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|a| AdamFile {
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                t: a.t,
                m: a.m.clone(),
                v: a.v.clone(),
            }),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: CheckpointFile = serde_json::from_str(s)?;
        if f.format != FORMAT || f.version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint `{}` version {}", f.format, f.version)));
        }
        if f.readout_out == 0 {
            return Err(Error::Format("readout_out must be positive".into()));
        }
        let layer = LayerParams::zeros(&f.slot_keys, f.d_h, f.rank, f.hidden)?;
        let readout = Readout { w: Array2::zeros((f.readout_out, f.d_h)), b: Array1::zeros(f.readout_out) };
        let mut model = Model { layer, readout, layers: f.layers };

        let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != f.tensors.len() {
            return Err(Error::Format(format!("expected {} tensors, found {}", names.len(), f.tensors.len())));
        }
        for ((dst, name), src) in model.tensors_mut().into_iter().zip(&names).zip(&f.tensors) {
            if &src.name != name {
                return Err(Error::Format(format!("expected tensor `{name}`, found `{}`", src.name)));
            }
            if src.values.len() != dst.len() {
                return Err(Error::Format(format!(
                    "tensor `{name}` has {} values, expected {}",
                    src.values.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(&src.values);
        }

        let optimizer = match f.optimizer {
            None => None,
            Some(a) => {
                let n = model.num_values();
                if a.m.len() != n || a.v.len() != n {
                    return Err(Error::Format(format!("optimizer state must hold {n} values")));
                }
                Some(Adam { beta1: a.beta1, beta2: a.beta2, eps: a.eps, t: a.t, m: a.m, v: a.v })
            }
        };
        Ok(Checkpoint { model, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Checkpoint::from_json(&s)
    }
}
