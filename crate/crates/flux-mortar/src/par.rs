//! Parallel dispatch helpers.
//!
//! With the `parallel` feature the per-subdomain fan-outs run on rayon;
//! without it the same closures run sequentially. Results are collected in
//! input order either way, so reductions downstream are deterministic.

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Fallible variant: first error wins, order preserved.
pub fn try_map_indexed<T, F>(n: usize, f: F) -> crate::Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> crate::Result<T> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}
