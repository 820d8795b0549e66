//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers run on the rayon pool; without it
//! they are plain loops. Results are always collected in index order, so the
//! default reductions are deterministic regardless of the thread count.

/// Reduction policy for tiled sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Reduction {
    /// Fixed-order merge of per-tile partial sums.
    #[default]
    Deterministic,
    /// Work-stealing reduction; the summation order depends on scheduling.
    Fast,
}

#[cfg(feature = "parallel")]
pub fn map_collect<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).map(f).collect()
}

/// Sum of `f(i)` over `0..len`.
pub fn sum<F>(len: usize, mode: Reduction, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    match mode {
        Reduction::Deterministic => map_collect(len, f).into_iter().sum(),
        Reduction::Fast => fast_sum(len, f),
    }
}

#[cfg(feature = "parallel")]
fn fast_sum<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).sum()
}

#[cfg(not(feature = "parallel"))]
fn fast_sum<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    (0..len).map(f).sum()
}

/// Maps `0..len` and folds the results with `combine`.
///
/// The deterministic mode folds left in index order; the fast mode lets rayon
/// choose the reduction tree.
pub fn map_reduce<T, F, I, C>(len: usize, mode: Reduction, identity: I, f: F, combine: C) -> T
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
    I: Fn() -> T + Sync + Send,
    C: Fn(T, T) -> T + Sync + Send,
{
    match mode {
        Reduction::Deterministic => map_collect(len, f).into_iter().fold(identity(), &combine),
        Reduction::Fast => fast_reduce(len, identity, f, combine),
    }
}

#[cfg(feature = "parallel")]
fn fast_reduce<T, F, I, C>(len: usize, identity: I, f: F, combine: C) -> T
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
    I: Fn() -> T + Sync + Send,
    C: Fn(T, T) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).reduce(identity, combine)
}

#[cfg(not(feature = "parallel"))]
fn fast_reduce<T, F, I, C>(len: usize, identity: I, f: F, combine: C) -> T
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
    I: Fn() -> T + Sync + Send,
    C: Fn(T, T) -> T + Sync + Send,
{
    (0..len).map(f).fold(identity(), combine)
}

/// Number of worker threads available to the helpers.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_keeps_order() {
        let v = map_collect(100, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn deterministic_sum_is_reproducible() {
        let f = |i: usize| 1.0 / (1.0 + i as f64).powi(2);
        let a = sum(10_000, Reduction::Deterministic, f);
        let b = sum(10_000, Reduction::Deterministic, f);
        assert_eq!(a.to_bits(), b.to_bits());
        let c = sum(10_000, Reduction::Fast, f);
        assert!((a - c).abs() < 1e-12);
    }
}
