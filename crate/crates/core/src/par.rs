//! Dispatch helpers that run per-item work either on the rayon pool or on
//! the calling thread.
//!
//! Every helper keeps one writer per output item and preserves item order, so
//! results do not depend on the number of workers. When several items fail,
//! the error of the lowest index is returned.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether parallel execution is compiled in.
pub const PARALLEL_AVAILABLE: bool = cfg!(feature = "parallel");

/// Smallest number of items handed to one rayon task.
#[cfg(feature = "parallel")]
const MIN_ITEMS_PER_TASK: usize = 16;

/// Evaluates `f(0..n)` and collects the results in index order.
pub fn map_range<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().with_min_len(MIN_ITEMS_PER_TASK).map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Like [`map_range`] for fallible work; returns the lowest-index error.
pub fn try_map_range<T, E, F>(n: usize, parallel: bool, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_range(n, parallel, f).into_iter().collect()
}

/// Splits `buf` into consecutive chunks of `chunk` elements and fills each
/// one with `f(chunk_index, chunk)`.
pub fn try_fill_chunks<E, F>(buf: &mut [f64], chunk: usize, parallel: bool, f: F) -> Result<(), E>
where
    E: Send,
    F: Fn(usize, &mut [f64]) -> Result<(), E> + Sync + Send,
{
    if chunk == 0 {
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    if parallel {
        let results: Vec<Result<(), E>> = buf
            .par_chunks_mut(chunk)
            .with_min_len(MIN_ITEMS_PER_TASK)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect();
        return results.into_iter().collect();
    }
    let _ = parallel;
    buf.chunks_mut(chunk).enumerate().try_for_each(|(i, c)| f(i, c))
}
