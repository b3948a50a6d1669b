//! Order-preserving data parallelism with an explicit worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Maps `f` over `items` on `jobs` worker threads, returning results in
/// input order. `jobs <= 1` runs on the calling thread.
pub fn parallel_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}
