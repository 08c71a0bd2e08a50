//! Deterministic data-parallel execution helpers.
//!
//! Every parallel loop in this crate goes through these functions. Work items
//! are independent and keyed by index, results are collected in index order,
//! and all reductions happen after collection, so the output is bit-identical
//! regardless of thread count — and identical to the sequential fallback built
//! without the `parallel` feature.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n` and collects results in index order.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_collect_seq(n, f)
    }
}

/// Sequential twin of [`map_collect`]. Always available; used by the
/// benchmark suite to compare against the parallel path.
pub fn map_collect_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Splits `0..n` into fixed-size chunks, maps each chunk to an accumulator,
/// and returns the accumulators in chunk order.
///
/// Chunk boundaries depend only on `n` and `chunk_size`, never on the worker
/// count, so a sequential fold over the returned vector is deterministic.
pub fn chunk_collect<A, F>(n: usize, chunk_size: usize, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(Range<usize>) -> A + Sync + Send,
{
    assert!(chunk_size > 0, "chunk_size must be positive");
    let n_chunks = n.div_ceil(chunk_size);
    map_collect(n_chunks, |c| {
        let lo = c * chunk_size;
        let hi = (lo + chunk_size).min(n);
        f(lo..hi)
    })
}
