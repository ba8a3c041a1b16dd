//! Row-parallel execution with a sequential fallback.
//!
//! Every dense output produced by this crate is filled row by row, and each
//! row is a pure function of the inputs with a fixed summation order. The
//! parallel and sequential paths therefore produce bit-identical results.

/// How row-wise kernels are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Exec {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

impl Exec {
    /// Calls `f(row_index, row)` for every `width`-sized chunk of `out`.
    pub fn for_each_row<F>(self, out: &mut [f64], width: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if width == 0 {
            return;
        }
        match self {
            Exec::Sequential => out
                .chunks_mut(width)
                .enumerate()
                .for_each(|(r, row)| f(r, row)),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                out.par_chunks_mut(width)
                    .enumerate()
                    .for_each(|(r, row)| f(r, row))
            }
        }
    }

    /// Maps `0..len` through `f`, preserving index order in the result.
    pub fn map_indices<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..len).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..len).into_par_iter().map(f).collect()
            }
        }
    }
}
