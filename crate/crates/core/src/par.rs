//! Trial-loop execution strategy. Monte Carlo style checks (randomized
//! bit-flip, replay, and corruption trials) are embarrassingly parallel:
//! each trial derives everything from its index. With the default
//! `parallel` feature the loop fans out across a rayon pool; without it the
//! same loop runs sequentially, which keeps the crate usable on
//! single-core targets. Results are index-ordered either way, so the two
//! strategies are observationally identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run `n` independent trials of `f` (called with the trial index) and
/// collect the results in index order.
#[cfg(feature = "parallel")]
pub fn run_trials<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn run_trials<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    run_trials_sequential(n, f)
}

/// Always-sequential variant, kept unconditionally so the two strategies
/// can be compared head-to-head in benchmarks and equivalence tests.
pub fn run_trials_sequential<T, F>(n: u64, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..n).map(f).collect()
}

/// Count the trials for which `pred` holds.
pub fn count_trials<F>(n: u64, pred: F) -> u64
where
    F: Fn(u64) -> bool + Sync + Send,
{
    run_trials(n, pred).into_iter().filter(|ok| *ok).count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::sha256;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: u64| sha256(&i.to_be_bytes());
        assert_eq!(run_trials(200, f), run_trials_sequential(200, f));
    }

    #[test]
    fn results_are_index_ordered() {
        let out = run_trials(64, |i| i * 3);
        assert_eq!(out, (0..64).map(|i| i * 3).collect::<Vec<_>>());
    }

    #[test]
    fn count_matches_filter() {
        assert_eq!(count_trials(100, |i| i % 7 == 0), 15);
    }
}
