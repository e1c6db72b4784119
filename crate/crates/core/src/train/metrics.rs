//! Probabilistic and point forecast metrics.

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Full metric set for one evaluation run. `rmse` is derived from `mse`, so
/// rmse^2 == mse holds by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub crps_mean: f64,
    pub crps_normalized: f64,
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub pearson_r: f64,
}

/// Point metrics with the degenerate-correlation flag.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMetrics {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub pearson_r: f64,
    /// True when either side was constant and pearson_r was pinned to 0.
    pub pearson_degenerate: bool,
}

/// Unbiased sample-based CRPS estimator:
/// (1/n) sum |x_i - y| - (1/(2n(n-1))) sum_{i != j} |x_i - x_j|.
/// The pairwise term is computed from the sorted samples in O(n log n).
pub fn crps_samples(samples: &[f64], y: f64) -> Result<f64, TrainError> {
    let n = samples.len();
    if n < 2 {
        return Err(TrainError::TooFewSamples(n));
    }
    let mean_abs = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / n as f64;

    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    // sum over i<j of (x_(j) - x_(i)) = sum_k (2k - n + 1) x_(k)
    let mut pair_sum = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        pair_sum += (2.0 * k as f64 - (n - 1) as f64) * x;
    }
    Ok(mean_abs - pair_sum / (n * (n - 1)) as f64)
}

/// CRPS of a point forecast degenerates to absolute error.
pub fn crps_point(x: f64, y: f64) -> f64 {
    (x - y).abs()
}

/// MSE, MAE, RMSE and Pearson correlation between predictions and actuals.
pub fn point_metrics(pred: &[f64], actual: &[f64]) -> Result<PointMetrics, TrainError> {
    if pred.len() != actual.len() {
        return Err(TrainError::LengthMismatch {
            left: pred.len(),
            right: actual.len(),
        });
    }
    if pred.is_empty() {
        return Err(TrainError::LengthMismatch { left: 0, right: 0 });
    }
    let n = pred.len() as f64;
    let mse = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / n;
    let mae = pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / n;

    let p_mean = pred.iter().sum::<f64>() / n;
    let a_mean = actual.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut p_var = 0.0;
    let mut a_var = 0.0;
    for (p, a) in pred.iter().zip(actual) {
        cov += (p - p_mean) * (a - a_mean);
        p_var += (p - p_mean) * (p - p_mean);
        a_var += (a - a_mean) * (a - a_mean);
    }
    let degenerate = p_var == 0.0 || a_var == 0.0 || pred.len() < 2;
    let pearson_r = if degenerate {
        0.0
    } else {
        cov / (p_var.sqrt() * a_var.sqrt())
    };

    Ok(PointMetrics {
        mse,
        mae,
        rmse: mse.sqrt(),
        pearson_r,
        pearson_degenerate: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn point_mass_reduces_to_absolute_error() {
        let samples = vec![3.0; 50];
        let crps = crps_samples(&samples, 5.0).unwrap();
        assert!((crps - 2.0).abs() < 1e-12);
        assert_eq!(crps_point(3.0, 5.0), 2.0);
    }

    #[test]
    fn perfect_forecast_scores_zero() {
        let samples = vec![1.5; 10];
        let crps = crps_samples(&samples, 1.5).unwrap();
        assert!(crps.abs() < 1e-12);
    }

    #[test]
    fn crps_is_nonnegative_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let samples: Vec<f64> = (0..37).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y: f64 = StandardNormal.sample(&mut rng);
            let crps = crps_samples(&samples, y).unwrap();
            assert!(crps >= -1e-12, "{crps}");
        }
    }

    #[test]
    fn sorted_pairwise_term_matches_quadratic_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<f64> = (0..101).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = 0.3;
        let n = samples.len() as f64;
        let mean_abs = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
        let mut pair = 0.0;
        for a in &samples {
            for b in &samples {
                pair += (a - b).abs();
            }
        }
        let brute = mean_abs - pair / (2.0 * n * (n - 1.0));
        let fast = crps_samples(&samples, y).unwrap();
        assert!((brute - fast).abs() < 1e-12, "{brute} vs {fast}");
    }

    #[test]
    fn gaussian_closed_form() {
        // closed form at y=0 for standard normal samples:
        // sigma * [z(2*Phi(z)-1) + 2*phi(z) - 1/sqrt(pi)] at z=0
        // = 2/sqrt(2*pi) - 1/sqrt(pi) = 0.23369497...
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let samples: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let crps = crps_samples(&samples, 0.0).unwrap();
        let expected = 0.233695;
        assert!(
            (crps - expected).abs() / expected < 0.01,
            "{crps} vs {expected}"
        );
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(matches!(
            crps_samples(&[1.0], 0.0),
            Err(TrainError::TooFewSamples(1))
        ));
    }

    #[test]
    fn point_metrics_arithmetic() {
        let m = point_metrics(&[1.0, 2.0], &[1.0, 4.0]).unwrap();
        assert_eq!(m.mse, 2.0);
        assert_eq!(m.mae, 1.0);
        assert!((m.rmse - 1.414214).abs() < 1e-6);
        assert!((m.rmse * m.rmse - m.mse).abs() < 1e-12);
    }

    #[test]
    fn identical_series_correlate_perfectly() {
        let m = point_metrics(&[1.0, 2.0, 5.0], &[1.0, 2.0, 5.0]).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.mae, 0.0);
        assert!((m.pearson_r - 1.0).abs() < 1e-12);
        assert!(!m.pearson_degenerate);
    }

    #[test]
    fn anti_correlated_series() {
        let a = [1.0, 2.0, 3.5, -0.5];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let m = point_metrics(&neg, &a).unwrap();
        assert!((m.pearson_r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_side_is_flagged() {
        let m = point_metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.pearson_r, 0.0);
        assert!(m.pearson_degenerate);
    }

    #[test]
    fn mae_never_exceeds_rmse() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let pred: Vec<f64> = (0..23).map(|_| StandardNormal.sample(&mut rng)).collect();
            let act: Vec<f64> = (0..23).map(|_| StandardNormal.sample(&mut rng)).collect();
            let m = point_metrics(&pred, &act).unwrap();
            assert!(m.mae <= m.rmse + 1e-12);
        }
    }
}
