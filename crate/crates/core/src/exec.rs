//! Parallel map over index ranges with a sequential fallback.
//!
//! With the `parallel` feature (default) and more than one worker, work runs
//! on a dedicated rayon pool of exactly that many threads. Results are always
//! returned in index order, so output never depends on the worker count.

use crate::error::{Error, Result};

/// Worker threads available to this process.
pub fn available_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// True when the crate was built with the rayon backend.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

/// Applies `f` to `0..n` on `workers` threads, returning results in index order.
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        return Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()));
    }
    Ok((0..n).map(f).collect())
}

/// Like [`map_indexed`] for fallible work; the first error by index wins.
pub fn try_map_indexed<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(n, workers, f)?.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_workers() {
        let seq = map_indexed(1000, 1, |i| i * i).unwrap();
        for w in [2, 3, 8] {
            assert_eq!(map_indexed(1000, w, |i| i * i).unwrap(), seq);
        }
        assert!(map_indexed(3, 0, |i| i).is_err());
    }

    #[test]
    fn first_error_by_index() {
        let r = try_map_indexed(100, 4, |i| {
            if i % 30 == 29 {
                Err(Error::Argument(format!("{i}")))
            } else {
                Ok(i)
            }
        });
        match r {
            Err(Error::Argument(m)) => assert_eq!(m, "29"),
            other => panic!("{other:?}"),
        }
    }
}
