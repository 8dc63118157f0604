//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over the current rayon
//! pool; without it every helper is a plain loop. Reductions are always split
//! into fixed-size pixel chunks whose partials are combined in chunk order, so
//! floating-point sums are bit-identical regardless of the worker count.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Pixels per reduction chunk. Changing it changes low-order bits of sums.
pub const CHUNK: usize = 4096;

/// Number of workers the helpers will use.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Runs `f` with at most `jobs` workers (`0` = all available). Output never depends on `jobs`.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if jobs == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        f()
    }
}

#[cfg_attr(feature = "parallel", allow(dead_code))]
fn chunk_ranges(len: usize) -> impl Iterator<Item = Range<usize>> {
    (0..len.div_ceil(CHUNK)).map(move |c| c * CHUNK..((c + 1) * CHUNK).min(len))
}

/// Evaluates `f` once per chunk of `0..len` and returns the partials in chunk order.
pub fn chunk_partials<A, F>(len: usize, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(Range<usize>) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        let n = len.div_ceil(CHUNK);
        (0..n)
            .into_par_iter()
            .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        chunk_ranges(len).map(f).collect()
    }
}

/// Chunked sum with a deterministic combination order.
pub fn chunked_sum<F>(len: usize, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync + Send,
{
    chunk_partials(len, f)
        .into_iter()
        .fold(0.0, |acc, x| acc + x)
}

/// Fills `out` chunk by chunk; `f` receives the starting index of its chunk.
pub fn fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| f(c * CHUNK, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (c, chunk) in out.chunks_mut(CHUNK).enumerate() {
            f(c * CHUNK, chunk);
        }
    }
}

/// Order-preserving map over a slice.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
