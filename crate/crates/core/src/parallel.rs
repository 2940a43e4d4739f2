//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these fan out over the rayon pool;
//! without it they run sequentially with identical semantics. Every call site
//! writes disjoint output regions and keeps reductions in a fixed order, so
//! results are bitwise identical regardless of feature flag or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `0..n` to a vector, in index order.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
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
        (0..n).map(f).collect()
    }
}

/// Fallible variant of [`par_map`]; the first error (by index) wins.
pub fn try_par_map<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Apply `f(chunk_index, chunk)` to disjoint `chunk_len`-sized pieces of `buf`.
pub fn par_chunks_mut<T, F>(buf: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(chunk_len > 0 && buf.len() % chunk_len == 0);
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }
}
