//! Thread-pool executor for sweep cells.

use navsim_core::experiments::Executor;
use rayon::prelude::*;

/// Runs cells on a rayon pool. Results keep input order, so the output is
/// identical to the sequential executor.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `jobs = 0` uses every available core.
    pub fn new(jobs: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        Self { pool }
    }
}

impl Executor for RayonExecutor {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        self.pool.install(|| items.into_par_iter().map(&f).collect())
    }
}
