//! Thread-pool executor and wall clock for the engine.

use std::time::Instant;

use mcpose_core::particle::{Clock, Executor};
use rayon::prelude::*;

/// Runs the engine's per-sample work on a dedicated rayon pool. Results come
/// back in index order, so output never depends on the thread count.
#[derive(Debug)]
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    pub fn new(n_workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n_workers.max(1)).build()?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Parallel {
    fn map_with<S, T, I, F>(&self, n: usize, init: I, f: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map_init(&init, |s, i| f(s, i)).collect())
    }
}

/// Seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcpose_core::particle::Sequential;

    #[test]
    fn parallel_matches_sequential_order() {
        let f = |acc: &mut u64, i: usize| {
            *acc += 1;
            (i * i) as u64
        };
        let seq = Sequential.map_with(1000, || 0u64, f);
        for workers in [1, 3, 8] {
            assert_eq!(Parallel::new(workers).unwrap().map_with(1000, || 0u64, f), seq);
        }
    }
}
