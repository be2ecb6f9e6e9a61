//! Trial-level parallelism with order-preserving collection.

use rayon::prelude::*;

use crate::error::Result;

/// Environment variable capping the worker count (0 or unset = all cores).
pub const THREADS_ENV: &str = "WFL_ALLOC_THREADS";

pub fn configured_threads() -> usize {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0)
}

/// Maps `f` over `0..n` on a pool of `threads` workers (0 = auto). The
/// output is in index order regardless of scheduling.
pub fn map_trials<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
}
