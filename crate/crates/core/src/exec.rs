//! Order-preserving map over independent jobs: a rayon pool when the
//! `parallel` feature is on and more than one worker is requested, a plain
//! iterator otherwise. Output order always follows input order.

/// Worker-count override read when no explicit count is given.
pub const WORKERS_ENV: &str = "CHEAPTALK_WORKERS";

/// Explicit count, else the environment override, else `None` (all cores).
pub fn resolve_workers(explicit: Option<usize>) -> Option<usize> {
    explicit.or_else(|| {
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
    })
}

pub fn sequential_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: &[T], workers: Option<usize>, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;

    match workers {
        Some(1) => sequential_map(items, f),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.par_iter().map(f).collect(),
        },
        None => items.par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: &[T], _workers: Option<usize>, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    sequential_map(items, f)
}
