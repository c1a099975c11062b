//! Draw- and replication-level parallelism.
//!
//! Every unit of work owns its own random stream, so results never depend on
//! scheduling. `SWX_THREADS` sizes the pool and is otherwise inert.

use rayon::prelude::*;

use crate::numerics::{RngStream, StreamRng};

pub const THREADS_ENV: &str = "SWX_THREADS";

/// Run `f` on a pool sized by `SWX_THREADS` when set, else on the global pool.
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => with_threads(n, f),
        _ => f(),
    }
}

/// Run `f` on a dedicated pool of `n` workers.
pub fn with_threads<R: Send>(n: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build a {n}-thread pool ({e}); using the global pool");
            f()
        }
    }
}

/// Number of draws `b = 1..=draws` for which `hit` holds, where draw `b`
/// receives the stream `(seed, b)`.
pub fn count_draws(draws: usize, seed: u64, hit: impl Fn(&mut StreamRng) -> bool + Sync) -> usize {
    (1..draws + 1)
        .into_par_iter()
        .with_min_len(64)
        .filter(|&b| hit(&mut RngStream::new(seed, b as u64).rng()))
        .count()
}

/// `f` evaluated on draws `1..=draws`, in draw order.
pub fn map_draws<T: Send>(draws: usize, seed: u64, f: impl Fn(&mut StreamRng) -> T + Sync) -> Vec<T> {
    (1..draws + 1).into_par_iter().with_min_len(64).map(|b| f(&mut RngStream::new(seed, b as u64).rng())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let run = || map_draws(1000, 42, |rng| rng.gaussian());
        let one = with_threads(1, run);
        let many = with_threads(4, run);
        assert_eq!(one, many);
        let c1 = with_threads(1, || count_draws(5000, 3, |rng| rng.uniform() < 0.3));
        let c8 = with_threads(8, || count_draws(5000, 3, |rng| rng.uniform() < 0.3));
        assert_eq!(c1, c8);
    }
}
