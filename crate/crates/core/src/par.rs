//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature, work is spread over the rayon pool;
//! without it (or when [`Threads::Sequential`] is requested) the same
//! closures run on the calling thread. Results always come back in index
//! order, so callers get identical output either way.

use serde::{Deserialize, Serialize};

/// Execution policy for corpus- and batch-level loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Threads {
    /// Run on the calling thread.
    Sequential,
    /// Use the global rayon pool (sequential without the `parallel` feature).
    #[default]
    Pool,
}

impl Threads {
    pub fn from_count(n: usize) -> Self {
        if n == 1 {
            Threads::Sequential
        } else {
            Threads::Pool
        }
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(n: usize, threads: Threads, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if threads == Threads::Pool {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = threads;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, returning results in slice order.
pub fn map_slice<I, T, F>(items: &[I], threads: Threads, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    map_indexed(items.len(), threads, |i| f(&items[i]))
}

/// Configures the global pool width. Has no effect without `parallel` or
/// once the pool has been built.
pub fn init_pool(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let _ = threads;
}
