//! Deterministic data-parallel helpers.
//!
//! Work is split into fixed-size chunks independent of the worker count and
//! partial results are merged in chunk order, so floating point sums come out
//! bit-identical no matter how many threads rayon uses.

use rayon::prelude::*;

pub(crate) const CHUNK: usize = 4096;

pub(crate) fn chunked_fold<T, A, I, F, M>(items: &[T], chunk: usize, init: I, fold: F, mut merge: M) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, usize, &T) + Sync,
    M: FnMut(&mut A, A),
{
    let partials: Vec<A> = items
        .par_chunks(chunk.max(1))
        .enumerate()
        .map(|(c, slice)| {
            let mut acc = init();
            let base = c * chunk.max(1);
            for (k, item) in slice.iter().enumerate() {
                fold(&mut acc, base + k, item);
            }
            acc
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(&init);
    for p in iter {
        merge(&mut total, p);
    }
    total
}

/// Same as [`chunked_fold`] over the index range `0..n`.
pub(crate) fn chunked_range_fold<A, I, F, M>(n: usize, chunk: usize, init: I, fold: F, mut merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, usize) + Sync,
    M: FnMut(&mut A, A),
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let partials: Vec<A> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for i in c * chunk..((c + 1) * chunk).min(n) {
                fold(&mut acc, i);
            }
            acc
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(&init);
    for p in iter {
        merge(&mut total, p);
    }
    total
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
