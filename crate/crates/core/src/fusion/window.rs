//! Overlapping fixed-length windows over a fused series.

use std::ops::Range;

use super::FusedSeries;

/// Window geometry over a series: window i starts at i*stride and spans
/// lag_margin + context_len input steps followed by horizon target steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSet {
    starts: Vec<usize>,
    pub context_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub lag_margin: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// Total steps one window covers.
    pub fn footprint(&self) -> usize {
        self.lag_margin + self.context_len + self.horizon
    }

    /// Index range of window i's input slab (lag margin plus context).
    pub fn input_range(&self, i: usize) -> Range<usize> {
        let s = self.starts[i];
        s..s + self.lag_margin + self.context_len
    }

    /// Index range of window i's target slab.
    pub fn target_range(&self, i: usize) -> Range<usize> {
        let s = self.starts[i] + self.lag_margin + self.context_len;
        s..s + self.horizon
    }

    /// Positions of the context tokens within the series (the model predicts
    /// the value at each of these positions from strictly earlier values).
    pub fn token_range(&self, i: usize) -> Range<usize> {
        let s = self.starts[i] + self.lag_margin;
        s..s + self.context_len
    }

    /// Keeps only the first `n` windows.
    pub fn truncate(&mut self, n: usize) {
        self.starts.truncate(n);
    }
}

/// Number of stride-spaced windows of `footprint` steps fitting in `n`.
pub fn count_windows(n: usize, footprint: usize, stride: usize) -> usize {
    if n < footprint {
        0
    } else {
        (n - footprint) / stride + 1
    }
}

/// Cuts overlapping windows; an empty set is allowed when the series is too
/// short. `lag_margin` must cover the model's largest lag.
pub fn make_windows(
    series: &FusedSeries,
    context_len: usize,
    horizon: usize,
    stride: usize,
    lag_margin: usize,
) -> WindowSet {
    assert!(context_len >= 1 && horizon >= 1 && stride >= 1);
    let n = series.len();
    let footprint = lag_margin + context_len + horizon;
    let count = count_windows(n, footprint, stride);
    WindowSet {
        starts: (0..count).map(|i| i * stride).collect(),
        context_len,
        horizon,
        stride,
        lag_margin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series_of_len(n: usize) -> FusedSeries {
        FusedSeries::synthetic_for_tests(n)
    }

    #[test]
    fn counting_example() {
        let ws = make_windows(&series_of_len(10), 4, 2, 2, 0);
        assert_eq!(ws.len(), 3);
        assert_eq!(ws.starts(), &[0, 2, 4]);
    }

    #[test]
    fn exact_fit_yields_one_window() {
        let ws = make_windows(&series_of_len(9), 4, 2, 3, 3);
        assert_eq!(ws.footprint(), 9);
        assert_eq!(ws.len(), 1);
    }

    #[test]
    fn too_short_series_yields_empty_set() {
        let ws = make_windows(&series_of_len(5), 4, 2, 1, 0);
        assert!(ws.is_empty());
    }

    #[test]
    fn count_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let n = rng.gen_range(0..200);
            let footprint = rng.gen_range(1..40);
            let stride = rng.gen_range(1..10);
            let brute = (0..)
                .map(|i| i * stride)
                .take_while(|&s| s + footprint <= n)
                .count();
            assert_eq!(count_windows(n, footprint, stride), brute, "n={n} f={footprint} s={stride}");
        }
    }

    #[test]
    fn target_strictly_after_input() {
        let ws = make_windows(&series_of_len(100), 8, 4, 5, 6);
        for i in 0..ws.len() {
            let input = ws.input_range(i);
            let target = ws.target_range(i);
            assert!(input.end <= target.start, "window {i} leaks");
            assert_eq!(input.len(), ws.lag_margin + ws.context_len);
            assert_eq!(target.len(), ws.horizon);
            assert!(target.end <= 100, "window {i} out of bounds");
        }
    }
}
