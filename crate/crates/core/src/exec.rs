//! Ensemble execution: rayon when the `parallel` feature is on, a plain loop
//! otherwise. Results are always collected by index, so the output order does
//! not depend on scheduling.

/// How an ensemble of independent jobs is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
    #[cfg(not(feature = "parallel"))]
    #[default]
    #[doc(hidden)]
    SequentialDefault,
}

impl Execution {
    /// Evaluates `job(i)` for `i in 0..count` and returns the results in index order.
    pub fn map_indexed<T, F>(self, count: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..count).into_par_iter().map(job).collect()
            }
            _ => (0..count).map(job).collect(),
        }
    }

    pub fn is_parallel(self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self == Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }
}
