//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) work items are spread over the rayon
//! pool; without it every helper degrades to a plain sequential loop. Results
//! always come back in input order so any reduction the caller performs over
//! them has a fixed summation order.

/// How batch-level work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Exec {
    /// One pass over the whole batch in row order. Bit-reproducible.
    #[default]
    Deterministic,
    /// Split rows across worker threads. Chunk layout depends on the pool size,
    /// so floating-point sums may differ in the last bits between machines.
    Parallel,
}

impl Exec {
    pub(crate) fn chunk_rows(self, rows: usize) -> usize {
        match self {
            Exec::Deterministic => rows.max(1),
            Exec::Parallel => {
                let workers = threads();
                rows.div_ceil(workers).max(1)
            }
        }
    }
}

/// Number of worker threads the parallel paths will use.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Maps `f` over `items`, in parallel when the feature is on, preserving order.
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Like [`map_ordered`] but over an index range.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
