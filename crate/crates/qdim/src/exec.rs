//! Execution-mode plumbing: a runtime switch between sequential and
//! data-parallel evaluation with bitwise-identical results.
//!
//! Parallel reductions are deterministic because work is cut into fixed-size
//! chunks, each chunk is reduced sequentially, and the per-chunk partials are
//! folded in chunk order. Work stealing can reorder chunk execution but not
//! the fold.

use crate::numerics::comp_sum;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runtime choice of execution backend.
///
/// `Parallel` silently degrades to sequential when the crate is built
/// without the `parallel` feature, keeping call sites portable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    pub fn from_flag(parallel: bool) -> Self {
        if parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    fn is_parallel(self) -> bool {
        match self {
            ExecMode::Sequential => false,
            ExecMode::Parallel => cfg!(feature = "parallel"),
        }
    }
}

/// Chunk length for deterministic reductions; large enough to amortize
/// scheduling, small enough to load-balance a few cores.
pub const CHUNK: usize = 1 << 16;

/// Sum `f(i)` for `i` in `0..len` with Neumaier compensation, identically in
/// both modes: chunk partials are computed independently and folded in order.
pub fn sum_indexed<F>(mode: ExecMode, len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let n_chunks = len.div_ceil(CHUNK);
    let chunk_sum = |c: usize| {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(len);
        comp_sum((lo..hi).map(&f))
    };
    let partials: Vec<f64> = if mode.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            (0..n_chunks).into_par_iter().map(chunk_sum).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n_chunks).map(chunk_sum).collect()
        }
    } else {
        (0..n_chunks).map(chunk_sum).collect()
    };
    comp_sum(partials)
}

/// Sum a pair `(a, b) = f(i)` componentwise over `0..len`, with the same
/// deterministic chunking as `sum_indexed`.
pub fn sum_pair_indexed<F>(mode: ExecMode, len: usize, f: F) -> (f64, f64)
where
    F: Fn(usize) -> (f64, f64) + Sync,
{
    let n_chunks = len.div_ceil(CHUNK);
    let chunk_sum = |c: usize| {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(len);
        let pairs: Vec<(f64, f64)> = (lo..hi).map(&f).collect();
        (
            comp_sum(pairs.iter().map(|p| p.0)),
            comp_sum(pairs.iter().map(|p| p.1)),
        )
    };
    let partials: Vec<(f64, f64)> = if mode.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            (0..n_chunks).into_par_iter().map(chunk_sum).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n_chunks).map(chunk_sum).collect()
        }
    } else {
        (0..n_chunks).map(chunk_sum).collect()
    };
    (
        comp_sum(partials.iter().map(|p| p.0)),
        comp_sum(partials.iter().map(|p| p.1)),
    )
}

/// Map `f` over `0..len` preserving index order.
pub fn map_indexed<T, F>(mode: ExecMode, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if mode.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// Maximum of `f(i)` over `0..len`; `NEG_INFINITY` when empty.
pub fn max_indexed<F>(mode: ExecMode, len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let n_chunks = len.div_ceil(CHUNK);
    let chunk_max = |c: usize| {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(len);
        (lo..hi).map(&f).fold(f64::NEG_INFINITY, f64::max)
    };
    let fold = |parts: Vec<f64>| parts.into_iter().fold(f64::NEG_INFINITY, f64::max);
    if mode.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            return fold((0..n_chunks).into_par_iter().map(chunk_max).collect());
        }
    }
    fold((0..n_chunks).map(chunk_max).collect())
}

/// Sort a key/value pair table by key (keys must be distinct).
pub fn sort_pairs(mode: ExecMode, keys: &mut Vec<u64>, vals: &mut Vec<f64>) {
    debug_assert_eq!(keys.len(), vals.len());
    let mut idx: Vec<u32> = (0..keys.len() as u32).collect();
    if mode.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            idx.par_sort_unstable_by_key(|&i| keys[i as usize]);
        }
        #[cfg(not(feature = "parallel"))]
        {
            idx.sort_unstable_by_key(|&i| keys[i as usize]);
        }
    } else {
        idx.sort_unstable_by_key(|&i| keys[i as usize]);
    }
    *keys = idx.iter().map(|&i| keys[i as usize]).collect();
    *vals = idx.iter().map(|&i| vals[i as usize]).collect();
}

/// Sort a slice of f64 ascending by total order (NaN-free input expected).
pub fn sort_f64(mode: ExecMode, xs: &mut [f64]) {
    if mode.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            xs.par_sort_unstable_by(f64::total_cmp);
            return;
        }
    }
    xs.sort_unstable_by(f64::total_cmp);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise_on_large_alternating_sum() {
        let f = |i: usize| {
            let x = (i as f64).sin() * 1e3;
            if i % 2 == 0 {
                x
            } else {
                -x * 0.999_999
            }
        };
        let n = 1_000_000;
        let a = sum_indexed(ExecMode::Sequential, n, f);
        let b = sum_indexed(ExecMode::Parallel, n, f);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn modes_agree_on_max_and_map() {
        let n = 300_000;
        let f = |i: usize| ((i * 2654435761) % 1000003) as f64;
        let a = max_indexed(ExecMode::Sequential, n, f);
        let b = max_indexed(ExecMode::Parallel, n, f);
        assert_eq!(a.to_bits(), b.to_bits());
        let va = map_indexed(ExecMode::Sequential, 1000, |i| i * i);
        let vb = map_indexed(ExecMode::Parallel, 1000, |i| i * i);
        assert_eq!(va, vb);
    }

    #[test]
    fn pair_sort_orders_by_key_and_carries_values() {
        let mut keys = vec![5u64, 1, 9, 3];
        let mut vals = vec![0.5, 0.1, 0.9, 0.3];
        sort_pairs(ExecMode::Sequential, &mut keys, &mut vals);
        assert_eq!(keys, vec![1, 3, 5, 9]);
        assert_eq!(vals, vec![0.1, 0.3, 0.5, 0.9]);
    }
}
