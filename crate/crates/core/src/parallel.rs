//! Patient-level parallelism with order-preserving results.

use rayon::prelude::*;

use crate::error::Result;

/// Maps `f` over `items` on a pool of `threads` workers (at least one).
///
/// Output order equals input order, and on failure the error of the first
/// failing item (in input order) is returned, so results never depend on
/// scheduling.
pub fn try_map<T, U, F>(threads: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    let threads = threads.max(1);
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    let results: Vec<Result<U>> = pool.install(|| items.par_iter().map(&f).collect());
    results.into_iter().collect()
}
