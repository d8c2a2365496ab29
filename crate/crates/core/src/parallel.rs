//! Deterministic fan-out of independent trials over a rayon pool.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Evaluates `f(0), f(1), ..., f(count - 1)` on the current rayon pool and
/// returns the results in index order, whatever the number of threads.
pub fn map_indices<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Runs `f` inside a dedicated pool of `workers` threads, or on the global
/// pool when `workers` is `None`.
pub fn with_workers<T, F>(workers: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Parameter("workers must be at least 1".into())),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Invariant(format!("cannot build a pool of {w} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_pool_size() {
        let f = |i: u64| crate::rng::mix64(i);
        let one = with_workers(Some(1), || map_indices(500, f)).unwrap();
        let many = with_workers(Some(7), || map_indices(500, f)).unwrap();
        assert_eq!(one, many);
        assert_eq!(one[3], crate::rng::mix64(3));
    }

    #[test]
    fn zero_workers_is_rejected() {
        assert!(with_workers(Some(0), || ()).is_err());
    }
}
