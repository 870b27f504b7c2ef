//! Data-parallel map with a sequential fallback.
//!
//! Everything compute-heavy (batch gradients, dataset encoding, evaluation
//! repeats) funnels through [`par_map`], which runs on rayon when the
//! `parallel` feature is enabled and degrades to a plain loop otherwise.
//! Output order always matches input order, so reductions downstream are
//! bit-identical across thread counts and both backends.

/// Applies `f` to every item, preserving order.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Applies `f` to every item, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Applies `f` to 0..n, preserving order.
pub fn par_map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    let indices: Vec<usize> = (0..n).collect();
    par_map(&indices, |i| f(*i))
}

/// Which backend [`par_map`] compiles to.
pub fn backend() -> &'static str {
    if cfg!(feature = "parallel") {
        "rayon"
    } else {
        "sequential"
    }
}
