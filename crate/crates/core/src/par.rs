//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) work is spread over the rayon pool;
//! without it every helper runs sequentially. Results always come back in
//! index order, and callers reduce them sequentially, so outputs are
//! bit-identical in both builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

/// Runtime choice of execution strategy. `Rayon` degrades to sequential
/// execution when the crate is built without the `parallel` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    #[default]
    Rayon,
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Rayon
    }
}

pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    map_indexed_with(Parallelism::default(), n, f)
}

pub fn map_indexed_with<R, F>(mode: Parallelism, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Fallible indexed map; the first error in index order is returned.
pub fn try_map_indexed<R, F>(n: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

pub fn try_map_indexed_with<R, F>(mode: Parallelism, n: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    map_indexed_with(mode, n, f).into_iter().collect()
}
