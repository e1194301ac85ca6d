//! Trial-level data parallelism.
//!
//! Results always come back in trial order, so any reduction performed by the
//! caller over the returned vector is independent of the worker count. With
//! the `parallel` feature disabled everything runs on the calling thread.

/// Worker count requested by the caller. `None` means "use the pool default".
pub type Workers = Option<usize>;

/// Evaluate `f(trial)` for every trial in `0..trials` on the calling thread.
pub fn map_trials_sequential<T, F>(trials: u64, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..trials).map(f).collect()
}

/// Evaluate `f(trial)` for every trial, in parallel when available.
#[cfg(feature = "parallel")]
pub fn map_trials<T, F>(trials: u64, workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;

    if workers == Some(1) {
        return map_trials_sequential(trials, f);
    }
    let run = || (0..trials).into_par_iter().map(&f).collect();
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("failed to build worker pool")
            .install(run),
        None => run(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_trials<T, F>(trials: u64, _workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    map_trials_sequential(trials, f)
}
