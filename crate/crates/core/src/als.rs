//! Alternating least squares fitting of a CP factor to a dense table.
//!
//! Each sweep solves, slot by slot, the ridge-regularized problem
//! `min_W ||T_(k) - W K_k^T||^2 + ridge ||W||^2` where `K_k` is the
//! Khatri-Rao product of the other slots. The regularized objective
//! `||T - [[W]]||^2 + ridge * sum_j ||W_j||^2` is therefore non-increasing
//! from one sweep to the next (up to rounding).

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{next_index, CpFactor, DenseTensor, Limits};

pub const DEFAULT_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct AlsOptions {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the relative error changes by less than this between sweeps.
    pub tol: f64,
    pub seed: u64,
    pub ridge: f64,
}

impl AlsOptions {
    pub fn new(rank: usize) -> Self {
        AlsOptions { rank, max_iters: 500, tol: 1e-12, seed: 0, ridge: DEFAULT_RIDGE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlsSweep {
    pub relative_error: f64,
    /// Squared residual plus the ridge penalty.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct AlsFit {
    pub factor: CpFactor,
    pub relative_error: f64,
    pub iterations: usize,
    /// One entry per completed sweep; entry 0 is the initialization.
    pub history: Vec<AlsSweep>,
}

/// Fits a rank-`rank` CP factor and returns it with its relative error.
pub fn cp_fit_als(t: &DenseTensor, rank: usize, max_iters: usize, tol: f64) -> Result<(CpFactor, f64)> {
    let fit = fit_als(t, &AlsOptions { rank, max_iters, tol, ..AlsOptions::new(rank) })?;
    Ok((fit.factor, fit.relative_error))
}

pub fn fit_als(t: &DenseTensor, opts: &AlsOptions) -> Result<AlsFit> {
    let d = t
        .uniform_cardinality()
        .ok_or_else(|| Error::Unsupported(format!("non-uniform cardinality {:?}", t.shape())))?;
    if opts.rank == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    if opts.ridge.is_nan() || opts.ridge < 0.0 {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {}", opts.ridge)));
    }
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("cannot measure relative error of a zero tensor".into()));
    }
    let arity = t.order();
    let rank = opts.rank;

    let mut rng = rng::seeded(opts.seed);
    let mut weights: Vec<Array2<f64>> = (0..arity)
        .map(|_| Array2::from_shape_vec((d, rank), rng::uniform_vec(&mut rng, d * rank, 0.0, 1.0)).unwrap())
        .collect();

    let mut history = vec![evaluate(t, &weights, opts.ridge, norm)?];
    let mut iterations = 0;
    while iterations < opts.max_iters {
        for k in 0..arity {
            weights[k] = solve_slot(t, &weights, k, opts.ridge)?;
        }
        iterations += 1;
        let sweep = evaluate(t, &weights, opts.ridge, norm)?;
        let prev = history.last().unwrap().relative_error;
        history.push(sweep);
        if (prev - sweep.relative_error).abs() < opts.tol {
            break;
        }
    }

    let relative_error = history.last().unwrap().relative_error;
    Ok(AlsFit { factor: CpFactor::new(weights)?, relative_error, iterations, history })
}

/// Exact minimizer for slot `k` with the other slots fixed.
fn solve_slot(t: &DenseTensor, weights: &[Array2<f64>], k: usize, ridge: f64) -> Result<Array2<f64>> {
    let (d, rank) = weights[k].dim();

    // Hadamard product of the other slots' Gram matrices.
    let mut gram = DMatrix::<f64>::from_element(rank, rank, 1.0);
    for (j, w) in weights.iter().enumerate() {
        if j != k {
            let g = w.t().dot(w);
            for r in 0..rank {
                for s in 0..rank {
                    gram[(r, s)] *= g[[r, s]];
                }
            }
        }
    }
    for r in 0..rank {
        gram[(r, r)] += ridge;
    }

    // Matricized tensor times Khatri-Rao product.
    let mut mttkrp = DMatrix::<f64>::zeros(rank, d);
    let mut index = vec![0usize; t.order()];
    let mut prod = vec![0.0; rank];
    for &value in t.data() {
        if value != 0.0 {
            prod.iter_mut().for_each(|p| *p = value);
            for (j, w) in weights.iter().enumerate() {
                if j != k {
                    let row = w.row(index[j]);
                    prod.iter_mut().zip(row.iter()).for_each(|(p, x)| *p *= x);
                }
            }
            let x = index[k];
            for r in 0..rank {
                mttkrp[(r, x)] += prod[r];
            }
        }
        next_index(&mut index, t.shape());
    }

    let solved = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&mttkrp),
        None => gram
            .lu()
            .solve(&mttkrp)
            .ok_or_else(|| Error::Unsupported("normal equations are singular even with ridge".into()))?,
    };
    Ok(Array2::from_shape_fn((d, rank), |(x, r)| solved[(r, x)]))
}

fn evaluate(t: &DenseTensor, weights: &[Array2<f64>], ridge: f64, norm: f64) -> Result<AlsSweep> {
    let approx = CpFactor::new(weights.to_vec())?.expand_with(&Limits { max_elements: usize::MAX })?;
    let residual: f64 = t
        .data()
        .iter()
        .zip(approx.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let penalty: f64 = weights.iter().flat_map(|w| w.iter()).map(|x| x * x).sum();
    let relative_error = residual.sqrt() / norm;
    if !relative_error.is_finite() {
        return Err(Error::NonFinite { iteration: 0, context: "als residual".into() });
    }
    Ok(AlsSweep { relative_error, objective: residual + ridge * penalty })
}
