//! Ordered data-parallel map with a sequential fallback.
//!
//! Results always come back in input order, so any reduction the caller
//! performs afterwards is independent of the thread count.

/// Maps `f` over `items`, on the rayon pool when `parallel` is set and the
/// `parallel` feature is compiled in.
pub fn map_ordered<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel && items.len() > 1 {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Runs `f` inside a rayon pool with `workers` threads. With one worker, or
/// without the `parallel` feature, `f` runs on the calling thread.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if workers > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return pool.install(f);
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
    f()
}

pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
