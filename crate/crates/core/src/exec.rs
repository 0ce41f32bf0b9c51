//! Execution strategy for the data-parallel loops (per-sample convolution,
//! batch evaluation, image generation).
//!
//! Every parallel path collects results in index order and reduces them
//! sequentially, so outputs are bitwise identical for either strategy.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs
    /// sequentially.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Like [`Exec::map`] but short-circuits on the first error (by index).
    pub fn try_map<R, E, F>(self, n: usize, f: F) -> Result<Vec<R>, E>
    where
        R: Send,
        E: Send,
        F: Fn(usize) -> Result<R, E> + Send + Sync,
    {
        self.map(n, f).into_iter().collect()
    }

    /// Applies `f` to each fixed-size chunk of `data` in place.
    pub fn for_each_chunk<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}
