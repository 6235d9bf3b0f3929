//! Execution helpers that run on rayon when the `parallel` feature is
//! enabled and fall back to plain sequential loops otherwise.
//!
//! Every algorithm in this crate computes each output element independently
//! of iteration order, so the two execution modes are bit-identical; these
//! helpers only decide *where* the work runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f(row_index, row)` to each `width`-sized row of `data`.
#[cfg(feature = "parallel")]
pub(crate) fn for_each_row<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    data.par_chunks_mut(width)
        .enumerate()
        .for_each(|(r, row)| f(r, row));
}

/// Applies `f(row_index, row)` to each `width`-sized row of `data`.
#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_row<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(r, row)| f(r, row));
}

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub(crate) fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync,
{
    (0..n).map(f).collect()
}

/// Maps a fallible `f` over `0..n`; the first error (lowest index under the
/// sequential fallback, arbitrary under rayon) aborts the map.
#[cfg(feature = "parallel")]
pub(crate) fn try_map_indices<U, F, E>(n: usize, f: F) -> Result<Vec<U>, E>
where
    U: Send,
    E: Send,
    F: Fn(usize) -> Result<U, E> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Maps a fallible `f` over `0..n`; the first error aborts the map.
#[cfg(not(feature = "parallel"))]
pub(crate) fn try_map_indices<U, F, E>(n: usize, f: F) -> Result<Vec<U>, E>
where
    U: Send,
    E: Send,
    F: Fn(usize) -> Result<U, E> + Sync,
{
    (0..n).map(f).collect()
}

/// Sums values grouped to preserve a fixed reduction tree ("pairwise"
/// summation). Unlike a left fold, the grouping is independent of how the
/// values were produced, and the fixed tree keeps results bit-stable across
/// runs while also accumulating less rounding error on long inputs.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_apply_covers_every_row() {
        let mut data = vec![0u32; 12];
        for_each_row(&mut data, 4, |r, row| {
            for v in row.iter_mut() {
                *v = r as u32;
            }
        });
        assert_eq!(data, [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn map_preserves_index_order() {
        let out = map_indices(5, |i| i * i);
        assert_eq!(out, vec![0, 1, 4, 9, 16]);
    }

    #[test]
    fn try_map_propagates_errors() {
        let ok: Result<Vec<usize>, String> = try_map_indices(3, Ok);
        assert_eq!(ok.unwrap(), vec![0, 1, 2]);
        let err: Result<Vec<usize>, String> =
            try_map_indices(3, |i| if i == 1 { Err("boom".into()) } else { Ok(i) });
        assert!(err.is_err());
    }

    #[test]
    fn pairwise_sum_matches_exact_integers() {
        let values: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&values), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[3.5]), 3.5);
    }
}
