//! Data-parallel iteration over disjoint output planes.
//!
//! With the `parallel` feature the loops run on rayon; without it they are
//! plain sequential loops. Each chunk is owned by exactly one task and every
//! task iterates its reductions in a fixed order, so results are
//! bit-identical across thread counts and with the sequential fallback.

use crate::tensor::Elem;

#[cfg(feature = "parallel")]
pub(crate) fn for_each_chunk<F>(data: &mut [Elem], chunk: usize, f: F)
where
    F: Fn(usize, &mut [Elem]) + Sync + Send,
{
    use rayon::prelude::*;
    if chunk == 0 || data.is_empty() {
        return;
    }
    data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_chunk<F>(data: &mut [Elem], chunk: usize, f: F)
where
    F: Fn(usize, &mut [Elem]) + Sync + Send,
{
    if chunk == 0 || data.is_empty() {
        return;
    }
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Map an index range to owned results, preserving order.
#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).map(f).collect()
}
