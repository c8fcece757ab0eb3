//! Data-parallel map helpers with a sequential fallback.
//!
//! All parallel sites in the crate go through [`map_indexed`] so that
//! the `parallel` feature flips the whole crate between rayon and
//! plain iteration. Results are collected in index order, so both
//! paths produce identical output for pure closures.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
use std::sync::OnceLock;

/// Initializes the global rayon pool once, honoring `CONTNAV_THREADS`.
#[cfg(feature = "parallel")]
pub fn init_pool() {
    static INIT: OnceLock<()> = OnceLock::new();
    INIT.get_or_init(|| {
        if let Ok(v) = std::env::var("CONTNAV_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                if n >= 1 {
                    // Ignore the error: another pool may already be installed.
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}

/// Maps `f` over `0..n`, in parallel when the feature allows it.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    init_pool();
    (0..n).into_par_iter().map(f).collect()
}

/// No-op without the `parallel` feature.
#[cfg(not(feature = "parallel"))]
pub fn init_pool() {}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Always-sequential variant, kept available for benchmarks that
/// compare both execution paths under the same build.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
