//! Order-stable parallel reductions.
//!
//! Work is cut into fixed-size chunks whose partial results are collected in
//! order and reduced sequentially, so floating-point sums do not depend on the
//! number of worker threads.

use std::ops::Range;

use rayon::prelude::*;

pub const CHUNK: usize = 1024;

pub fn chunked<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    (0..n.div_ceil(CHUNK)).into_par_iter().map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(n))).collect()
}

/// Sum of `f(i)` over `0..n`.
pub fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    chunked(n, |r| r.map(&f).sum::<f64>()).into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_count_does_not_change_sums() {
        let f = |i: usize| (i as f64 * 0.37).sin() * 1e3 + 1e-7;
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| sum(100_003, f));
        let b = three.install(|| sum(100_003, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
