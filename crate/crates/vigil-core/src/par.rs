//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature the map runs on the rayon pool; results are
//! collected in input order either way, so downstream merges see the same
//! sequence and floating-point reductions stay deterministic.

#[cfg(feature = "parallel")]
pub(crate) fn ordered_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn ordered_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
