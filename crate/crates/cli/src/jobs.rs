use rayon::prelude::*;

use crate::CliError;

pub const THREADS_ENV: &str = "METASAMPLER_THREADS";

/// Worker count: `--jobs`, else the environment variable, else 1. The
/// environment variable also caps an explicit `--jobs`.
pub fn worker_count(flag: Option<usize>) -> usize {
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
    let n = flag.or(cap).unwrap_or(1);
    cap.map_or(n, |c| n.min(c)).max(1)
}

/// Runs `f` once per seed on up to `workers` threads. Results come back in
/// seed order; each job builds its own autodiff graphs.
pub fn run_jobs<T, F>(workers: usize, seeds: &[u64], f: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(u64) -> Result<T, CliError> + Sync,
{
    if workers <= 1 || seeds.len() <= 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.min(seeds.len()))
        .build()
        .map_err(|e| CliError::Input(format!("cannot start worker pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| f(s)).collect())
}
