//! Execution policy for the per-cell and per-trial loops.
//!
//! Every parallel loop in the crate goes through [`Exec`], so the sequential
//! and rayon paths evaluate exactly the same closures in the same per-item
//! order. Results are therefore bit-identical between the two.

/// How data-parallel loops are executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise falls
    /// back to [`Exec::Sequential`].
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `0..n`, preserving index order in the output.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fallible [`Exec::map`]. On failure the error of the lowest failing
    /// index is returned, whichever path ran.
    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            let all: Vec<Result<T, E>> = (0..n).into_par_iter().map(f).collect();
            return all.into_iter().collect();
        }
        (0..n).map(f).collect()
    }
}

/// Maps `f` over `0..n` on at most `jobs` worker threads. Output order is
/// index order regardless of scheduling.
pub fn map_with_jobs<T, F>(jobs: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(|| Exec::Parallel.map(n, f));
        }
    }
    let _ = jobs;
    Exec::Sequential.map(n, f)
}
