//! Indexed map helpers with a rayon path behind the `parallel` feature.
//!
//! Every parallel map is order-preserving and element-independent, so both
//! paths produce bit-identical results; reductions stay sequential in the
//! callers to keep runs reproducible.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sequential indexed map. Always compiled; the reference execution path.
pub(crate) fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    map_indexed_seq(n, f)
}
