//! Replication-level map with an optional rayon pool.

/// Applies `f` to `0..count` and returns the results in index order.
///
/// `jobs == 0` uses rayon's default pool size, `jobs == 1` (or a build
/// without the `parallel` feature) runs on the calling thread.
pub fn map_indices<T, F>(count: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs != 1 {
        use rayon::prelude::*;
        let run = || (0..count).into_par_iter().map(&f).collect();
        return match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        };
    }
    let _ = jobs;
    (0..count).map(f).collect()
}

/// Whether this build can run replications on more than one thread.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_output_for_any_job_count() {
        let expected: Vec<usize> = (0..257).map(|i| i * i).collect();
        for jobs in [0, 1, 2, 7] {
            assert_eq!(map_indices(257, jobs, |i| i * i), expected);
        }
        assert!(map_indices(0, 3, |i| i).is_empty());
    }
}
