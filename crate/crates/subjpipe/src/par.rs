//! Ordered map over a slice, data-parallel when the `parallel` feature is
//! enabled and plain sequential otherwise.
//!
//! Both variants produce results in input order and run the same closure on
//! the same inputs, so switching the feature (or the thread count) never
//! changes a single output bit. Reductions over the mapped values are done
//! sequentially by the callers for the same reason.
//!
//! Inputs below [`MIN_PARALLEL_ITEMS`] run sequentially even in parallel
//! builds: per-item work here is micro-scale (a row cleanup, one forward
//! pass) and pool dispatch costs more than the work itself. Larger inputs
//! are split no finer than [`min_len`] items per task.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
const MIN_PARALLEL_ITEMS: usize = 64;

#[cfg(feature = "parallel")]
fn min_len(n: usize) -> usize {
    (n / (8 * rayon::current_num_threads().max(1))).max(32)
}

#[cfg(feature = "parallel")]
pub(crate) fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    if items.len() < MIN_PARALLEL_ITEMS {
        return items.iter().map(f).collect();
    }
    items
        .par_iter()
        .with_min_len(min_len(items.len()))
        .map(f)
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub(crate) fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    if n < MIN_PARALLEL_ITEMS {
        return (0..n).map(f).collect();
    }
    (0..n)
        .into_par_iter()
        .with_min_len(min_len(n))
        .map(f)
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Fill each `width`-sized row of `buf` from its row index. Rows are
/// disjoint, so parallel workers write into one preallocated buffer and no
/// allocation crosses threads.
#[cfg(feature = "parallel")]
pub(crate) fn fill_rows<F>(buf: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    assert!(width > 0, "row width must be positive");
    let n = buf.len() / width;
    if n < MIN_PARALLEL_ITEMS {
        for (i, row) in buf.chunks_mut(width).enumerate() {
            f(i, row);
        }
        return;
    }
    buf.par_chunks_mut(width)
        .enumerate()
        .with_min_len(min_len(n))
        .for_each(|(i, row)| f(i, row));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn fill_rows<F>(buf: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    assert!(width > 0, "row width must be positive");
    for (i, row) in buf.chunks_mut(width).enumerate() {
        f(i, row);
    }
}
