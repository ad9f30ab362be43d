//! Worker-count control for batch-parallel kernels.
//!
//! Kernels split work per batch item and combine partial results in batch
//! order, so outputs are bitwise identical for any worker count. The default
//! is a single worker.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

static THREADS: AtomicUsize = AtomicUsize::new(1);

/// Sets the number of workers used by batch-parallel kernels and returns the
/// value in effect. The rayon pool is sized on the first call with `n > 1`;
/// later calls can lower the count but not grow the pool.
pub fn set_threads(n: usize) -> usize {
    let n = n.max(1);
    if n > 1 {
        // Already built by an earlier call; keeping that pool is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        let n = n.min(rayon::current_num_threads());
        THREADS.store(n, Ordering::Relaxed);
        n
    } else {
        THREADS.store(1, Ordering::Relaxed);
        1
    }
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Evaluates `f` for every index in `0..n`, in parallel when enabled, and
/// returns results in index order.
pub(crate) fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if threads() > 1 && n > 1 {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
