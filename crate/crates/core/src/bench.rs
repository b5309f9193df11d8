//! Timing of low-rank message sweeps against factor order and rank, plus
//! the CSV conventions shared by the command-line tools.

use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lbp::lowrank_sweep;
use crate::rng;
use crate::tensor::CpFactor;

pub const MIN_REPS: usize = 5;
pub const DEFAULT_INNER_SWEEPS: usize = 2000;
pub const CSV_HEADER: &str = "order,d,rank,nodes,reps,inner_sweeps,median_ns_per_sweep,checksum";

/// Floats in CSV output: 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub order: usize,
    pub d: usize,
    pub rank: usize,
    /// Variables touched by one sweep.
    pub nodes: usize,
    pub reps: usize,
    pub inner_sweeps: usize,
    /// Median over reps of the wall time of one sweep.
    pub median_ns_per_sweep: f64,
    /// Sum of the final sweep's outputs; identical in every rep.
    pub checksum: f64,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.order,
            self.d,
            self.rank,
            self.nodes,
            self.reps,
            self.inner_sweeps,
            format_float(self.median_ns_per_sweep),
            format_float(self.checksum)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub reps: usize,
    pub inner_sweeps: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { reps: 7, inner_sweeps: DEFAULT_INNER_SWEEPS, seed: 0 }
    }
}

/// Times every outgoing message of one CP factor of the given shape.
pub fn bench_sweep(order: usize, d: usize, rank: usize, opts: &BenchOptions) -> Result<BenchRecord> {
    if opts.reps < MIN_REPS {
        return Err(Error::InvalidArgument(format!("reps must be >= {MIN_REPS}, got {}", opts.reps)));
    }
    if opts.inner_sweeps == 0 {
        return Err(Error::InvalidArgument("inner_sweeps must be >= 1".into()));
    }
    let f = CpFactor::random(order, d, rank, opts.seed, 1.0)?;
    let mut r = rng::seeded(opts.seed.wrapping_add(1));
    let messages: Vec<Vec<f64>> = (0..order).map(|_| rng::positive_message(&mut r, d)).collect();
    let incoming: Vec<&[f64]> = messages.iter().map(|m| m.as_slice()).collect();
    let mut out = vec![0.0; order * d];

    let mut times = Vec::with_capacity(opts.reps);
    let mut checksum = None;
    for _ in 0..opts.reps {
        let start = Instant::now();
        for _ in 0..opts.inner_sweeps {
            black_box(lowrank_sweep(black_box(&f), black_box(&incoming), &mut out));
        }
        let elapsed = start.elapsed().as_nanos() as f64;
        times.push(elapsed / opts.inner_sweeps as f64);
        let sum: f64 = black_box(&out).iter().sum();
        match checksum {
            None => checksum = Some(sum),
            Some(c) if c.to_bits() != sum.to_bits() => {
                return Err(Error::InvalidArgument(format!("checksum changed between reps: {c} vs {sum}")));
            }
            Some(_) => {}
        }
    }
    Ok(BenchRecord {
        order,
        d,
        rank,
        nodes: order,
        reps: opts.reps,
        inner_sweeps: opts.inner_sweeps,
        median_ns_per_sweep: median(&mut times),
        checksum: checksum.unwrap(),
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn bench_order(orders: &[usize], d: usize, rank: usize, opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    check_ascending("orders", orders)?;
    orders.iter().map(|&n| bench_sweep(n, d, rank, opts)).collect()
}

pub fn bench_rank(ranks: &[usize], order: usize, d: usize, opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    check_ascending("ranks", ranks)?;
    ranks.iter().map(|&r| bench_sweep(order, d, r, opts)).collect()
}

fn check_ascending(what: &str, xs: &[usize]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} must not be empty")));
    }
    if xs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("{what} must be strictly ascending, got {xs:?}")));
    }
    Ok(())
}

/// Least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

/// `None` when fewer than two distinct `x` values are given.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if xs.len() < 2 || sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { intercept, slope, r_squared })
}

/// `"slope=…,intercept=…,r2=…"` or `"n/a"`.
pub fn describe_fit(fit: Option<LinearFit>) -> String {
    match fit {
        Some(f) => format!(
            "slope={},intercept={},r2={}",
            format_float(f.slope),
            format_float(f.intercept),
            format_float(f.r_squared)
        ),
        None => "n/a".into(),
    }
}

pub fn fit_records(records: &[BenchRecord], x: impl Fn(&BenchRecord) -> usize) -> Option<LinearFit> {
    let xs: Vec<f64> = records.iter().map(|r| x(r) as f64).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.median_ns_per_sweep).collect();
    fit_line(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_has_unit_r2() {
        let f = fit_line(&[1.0, 2.0, 4.0], &[3.0, 5.0, 9.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_fit_is_na() {
        assert_eq!(fit_line(&[4.0], &[1.0]), None);
        assert_eq!(describe_fit(None), "n/a");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn record_has_stable_checksum_and_min_reps() {
        let opts = BenchOptions { reps: 5, inner_sweeps: 3, seed: 1 };
        let a = bench_sweep(3, 2, 4, &opts).unwrap();
        let b = bench_sweep(3, 2, 4, &opts).unwrap();
        assert_eq!(a.checksum, b.checksum);
        assert!(bench_sweep(3, 2, 4, &BenchOptions { reps: 4, ..opts }).is_err());
        assert!(bench_order(&[4, 2], 2, 2, &opts).is_err());
    }

    #[test]
    fn float_format_has_17_significant_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
