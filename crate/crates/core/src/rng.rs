//! Seeded random sources. Everything random in the crate goes through a
//! ChaCha8 stream so fixtures are reproducible across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` i.i.d. draws from `U[lo, hi)`.
pub fn uniform_vec(rng: &mut SeededRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// A random probability vector with entries bounded away from zero.
pub fn positive_message(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    let mut v = uniform_vec(rng, d, 0.05, 1.0);
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}
