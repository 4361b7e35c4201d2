//! Data-parallel helpers.
//!
//! With the `parallel` feature (on by default) the mapping helpers fan out
//! over rayon's global pool; without it they run on the calling thread.
//! [`map_sequential`] is always sequential so both paths can be compared
//! in one build.

pub use self::actual::{map, map_indexed};

/// Maps over `source` on the calling thread, preserving order.
pub fn map_sequential<T, F, R>(source: &[T], op: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    source.iter().map(op).collect()
}

/// True when the crate was built with the `parallel` feature.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
mod actual {
    use rayon::prelude::*;

    /// Maps over `source`, preserving order in the output.
    pub fn map<T, F, R>(source: &[T], op: F) -> Vec<R>
    where
        T: Sync,
        F: Fn(&T) -> R + Sync + Send,
        R: Send,
    {
        source.par_iter().map(op).collect()
    }

    /// Maps `op` over `0..n`, preserving order in the output.
    pub fn map_indexed<F, R>(n: usize, op: F) -> Vec<R>
    where
        F: Fn(usize) -> R + Sync + Send,
        R: Send,
    {
        (0..n).into_par_iter().map(op).collect()
    }
}

#[cfg(not(feature = "parallel"))]
mod actual {
    pub fn map<T, F, R>(source: &[T], op: F) -> Vec<R>
    where
        T: Sync,
        F: Fn(&T) -> R + Sync + Send,
        R: Send,
    {
        source.iter().map(op).collect()
    }

    pub fn map_indexed<F, R>(n: usize, op: F) -> Vec<R>
    where
        F: Fn(usize) -> R + Sync + Send,
        R: Send,
    {
        (0..n).map(op).collect()
    }
}
