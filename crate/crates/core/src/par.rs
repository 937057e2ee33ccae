//! Execution strategy for the data-parallel inner loops.
//!
//! With the `rayon` feature (on by default) `Exec::Parallel` fans work out
//! over the global rayon pool. Without it every strategy runs sequentially,
//! so callers never need their own `cfg` gates. Work is always split into the
//! same chunks and results are assembled in order, so output does not depend
//! on the strategy or thread count.

#[cfg(feature = "rayon")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "rayon") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Whether work actually runs on more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "rayon") && self == Exec::Parallel
    }

    /// Calls `f(chunk_index, chunk)` for each `chunk_len`-sized piece of `data`.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Send + Sync,
    {
        let chunk_len = chunk_len.max(1);
        #[cfg(feature = "rayon")]
        if self == Exec::Parallel {
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }

    /// Like [`Exec::for_each_chunk_mut`] over two slices split with their own chunk lengths.
    pub fn for_each_chunk_pair_mut<A, B, F>(
        self,
        a: &mut [A],
        a_len: usize,
        b: &mut [B],
        b_len: usize,
        f: F,
    ) where
        A: Send,
        B: Send,
        F: Fn(usize, &mut [A], &mut [B]) + Send + Sync,
    {
        let (a_len, b_len) = (a_len.max(1), b_len.max(1));
        #[cfg(feature = "rayon")]
        if self == Exec::Parallel {
            a.par_chunks_mut(a_len)
                .zip(b.par_chunks_mut(b_len))
                .enumerate()
                .for_each(|(i, (x, y))| f(i, x, y));
            return;
        }
        a.chunks_mut(a_len)
            .zip(b.chunks_mut(b_len))
            .enumerate()
            .for_each(|(i, (x, y))| f(i, x, y));
    }

    /// Maps `0..n` through `f`, preserving order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        #[cfg(feature = "rayon")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}
