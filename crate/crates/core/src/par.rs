//! Execution strategy for independent work items.
//!
//! Items are indexed; each one derives its own RNG from the master seed and
//! its index, so results do not depend on the strategy or the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// The RNG for work item `index` under `seed`.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `(0..n).map(f)`, in index order.
pub fn map_range<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// `items.iter().map(f)`, in order.
pub fn map_slice<I, T, F>(exec: Exec, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Runs `f` with at most `jobs` worker threads. Without the `parallel`
/// feature this just calls `f`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    if let Some(n) = jobs {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            return pool.install(f);
        }
    }
    let _ = jobs;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn strategies_agree() {
        let f = |i: usize| item_rng(7, i as u64).gen::<u32>();
        assert_eq!(map_range(Exec::Sequential, 50, f), map_range(Exec::Parallel, 50, f));
        let xs: Vec<u64> = (0..20).collect();
        assert_eq!(map_slice(Exec::Sequential, &xs, |x| x * 2), map_slice(Exec::default(), &xs, |x| x * 2));
    }

    #[test]
    fn streams_differ() {
        assert_ne!(item_rng(1, 0).gen::<u64>(), item_rng(1, 1).gen::<u64>());
        assert_eq!(item_rng(1, 3).gen::<u64>(), item_rng(1, 3).gen::<u64>());
    }
}
