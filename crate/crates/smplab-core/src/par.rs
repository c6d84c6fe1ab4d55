//! Data-parallel path loop with a sequential fallback.
//!
//! Everything ensemble-shaped funnels through [`map_indexed`]: results come
//! back in index order, and all cross-path reductions happen sequentially on
//! the ordered output, so parallel and sequential builds produce bit-identical
//! numbers. The sequential twin stays available under the `parallel` feature
//! for benchmarks comparing the two.

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is active.
///
/// Output order is always the index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is active.
///
/// Output order is always the index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sequential version of [`map_indexed`], independent of feature flags.
pub fn map_indexed_seq<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    (0..n).map(f).collect()
}
