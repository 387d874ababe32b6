//! Thread-pool execution of likelihood and permutation tasks.

use crate::error::{Error, Result};
use rayon::prelude::*;
use tramkit_core::exec::{Executor, Partial};

/// Runs tasks on a dedicated rayon pool. Results are collected in task order,
/// so reductions match the sequential executor bitwise.
#[derive(Debug)]
pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    /// `threads = 0` lets rayon pick the number of cores.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::usage(format!("thread pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn run(&self, n_tasks: usize, task: &(dyn Fn(usize) -> Partial + Sync)) -> Vec<Partial> {
        self.pool
            .install(|| (0..n_tasks).into_par_iter().map(task).collect())
    }
}
