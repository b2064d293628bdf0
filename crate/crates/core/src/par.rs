//! Data-parallel helpers with a sequential fallback.
//!
//! Only order-preserving maps run in parallel. Every reduction over floats is
//! done afterwards on the collected vector in index order, so results do not
//! depend on thread count or on whether the `parallel` feature is enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for the heavy inner loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Falls back to [`Exec::Sequential`] when built without `parallel`.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, returning results in slice order.
pub fn map_slice<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Sum of `f(i)` for `i in 0..n` with a fixed-order reduction.
///
/// Partial sums are formed over fixed blocks of `BLOCK` indices and then
/// added left to right, so the rounding is identical for every execution
/// strategy.
pub fn sum_range<F>(exec: Exec, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    const BLOCK: usize = 256;
    let blocks = n.div_ceil(BLOCK);
    let partial = map_range(exec, blocks, |b| {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(n);
        (lo..hi).map(&f).sum::<f64>()
    });
    partial.iter().sum()
}
