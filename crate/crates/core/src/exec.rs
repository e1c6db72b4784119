//! Order-preserving map helpers that dispatch to rayon when the `parallel`
//! feature is enabled and to a plain sequential loop otherwise.
//!
//! Work items must be independently computable (derived seeds, no shared
//! accumulators) so that parallel and sequential execution produce identical
//! outputs; reductions over the mapped results happen sequentially at the
//! call site to keep float summation order fixed.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn map_collect<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    items.into_par_iter().map(f).collect()
}

/// Maps `f` over `items`, preserving input order in the output.
#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

/// Always-sequential twin of [`map_collect`]; used by the benches to compare
/// both execution paths and by tests asserting parallel/sequential parity.
pub fn map_collect_seq<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

/// Like [`map_collect`] but short-circuits on the first error.
#[cfg(feature = "parallel")]
pub fn try_map_collect<T, R, E, F>(items: Vec<T>, f: F) -> Result<Vec<R>, E>
where
    T: Send,
    R: Send,
    E: Send,
    F: Fn(T) -> Result<R, E> + Send + Sync,
{
    items.into_par_iter().map(f).collect()
}

/// Like [`map_collect`] but short-circuits on the first error.
#[cfg(not(feature = "parallel"))]
pub fn try_map_collect<T, R, E, F>(items: Vec<T>, f: F) -> Result<Vec<R>, E>
where
    F: Fn(T) -> Result<R, E>,
{
    items.into_iter().map(f).collect()
}

/// Derives an independent child seed from a base seed and a work-item index
/// (splitmix64 finalizer), so parallel items draw from disjoint streams no
/// matter what order they execute in.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let out = map_collect((0..1000).collect::<Vec<_>>(), |x| x * 2);
        let seq = map_collect_seq((0..1000).collect::<Vec<_>>(), |x| x * 2);
        assert_eq!(out, seq);
    }

    #[test]
    fn try_map_propagates_error() {
        let res: Result<Vec<i32>, &str> =
            try_map_collect(vec![1, 2, 3], |x| if x == 2 { Err("boom") } else { Ok(x) });
        assert_eq!(res, Err("boom"));
    }
}
