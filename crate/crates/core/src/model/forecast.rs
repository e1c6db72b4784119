//! Sampling-based autoregressive forecasting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::exec;

use super::student_t::standard_t_draw;
use super::{build_tokens, forward_step, ModelConfig, ModelError, StudentTParams};

/// How covariate values are extended past the observed history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovariatePolicy {
    /// Repeat each covariate's last observed value for every future step.
    #[default]
    HoldLast,
}

/// Monte-Carlo forecast: per-step Student-t parameters from the first sample
/// path plus all sampled trajectories, in normalized target units together
/// with the stats needed to map back to raw units.
#[derive(Debug, Clone)]
pub struct ForecastDistribution {
    pub horizon: usize,
    pub params_per_step: Vec<StudentTParams>,
    /// n_samples rows of `horizon` values each.
    pub sample_paths: Vec<Vec<f64>>,
    /// (mean, std) of the target channel for de-normalization.
    pub norm_stats: (f64, f64),
}

impl ForecastDistribution {
    /// Monte-Carlo mean path in normalized units.
    pub fn mean_path(&self) -> Vec<f64> {
        let n = self.sample_paths.len() as f64;
        (0..self.horizon)
            .map(|t| self.sample_paths.iter().map(|p| p[t]).sum::<f64>() / n)
            .collect()
    }

    /// Monte-Carlo mean path mapped back to raw units.
    pub fn mean_path_denormalized(&self) -> Vec<f64> {
        let (m, s) = self.norm_stats;
        self.mean_path().iter().map(|v| v * s + m).collect()
    }

    /// Empirical per-step quantile (0 <= q <= 1) across sample paths,
    /// in normalized units.
    pub fn quantile_path(&self, q: f64) -> Vec<f64> {
        assert!((0.0..=1.0).contains(&q));
        let n = self.sample_paths.len();
        (0..self.horizon)
            .map(|t| {
                let mut vals: Vec<f64> = self.sample_paths.iter().map(|p| p[t]).collect();
                vals.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
                let idx = ((q * (n - 1) as f64).round() as usize).min(n - 1);
                vals[idx]
            })
            .collect()
    }

    /// Samples for one horizon step across all paths, de-normalized.
    pub fn step_samples_denormalized(&self, step: usize) -> Vec<f64> {
        let (m, s) = self.norm_stats;
        self.sample_paths.iter().map(|p| p[step] * s + m).collect()
    }
}

/// Rolls the decoder forward `horizon` steps, drawing one Student-t sample per
/// step per path. Paths are independent with seeds derived from `seed` and the
/// path index, so the parallel and sequential backends produce identical
/// output. Inputs are in normalized units; `norm_stats` is carried through for
/// later de-normalization.
#[allow(clippy::too_many_arguments)]
pub fn forecast_autoregressive(
    cfg: &ModelConfig,
    weights: &crate::numerics::ParamSet,
    history_target: &[f64],
    history_covariates: &[Vec<f64>],
    context_len: usize,
    horizon: usize,
    n_samples: usize,
    _policy: CovariatePolicy,
    seed: u64,
    norm_stats: (f64, f64),
) -> Result<ForecastDistribution, ModelError> {
    let max_lag = cfg.lag_set.max_lag();
    if history_target.len() < max_lag + 1 {
        return Err(ModelError::InsufficientHistory {
            have: history_target.len(),
            need: max_lag + 1,
        });
    }
    assert!(horizon >= 1 && n_samples >= 1 && context_len >= 1);
    if history_covariates.len() != cfg.n_covariates {
        return Err(ModelError::BadConfig(format!(
            "{} covariate channels for n_covariates {}",
            history_covariates.len(),
            cfg.n_covariates
        )));
    }

    // Only the trailing max_lag + context_len steps are ever read.
    let keep = (max_lag + context_len).min(history_target.len());
    let offset = history_target.len() - keep;
    let target_tail: Vec<f64> = history_target[offset..].to_vec();
    let cov_tail: Vec<Vec<f64>> = history_covariates
        .iter()
        .map(|c| c[offset..].to_vec())
        .collect();
    // HoldLast: every future step reuses the last observed covariate row.
    let held_cov: Vec<f64> = cov_tail
        .iter()
        .map(|c| *c.last().expect("nonempty history"))
        .collect();

    let paths = exec::try_map_collect(
        (0..n_samples).collect::<Vec<_>>(),
        |path_idx| -> Result<(Vec<f64>, Vec<StudentTParams>), ModelError> {
            let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(seed, path_idx as u64));
            let mut target = target_tail.clone();
            let mut covs = cov_tail.clone();
            let mut draws = Vec::with_capacity(horizon);
            let mut params_log = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                // the final token sits at the yet-unobserved position
                // target.len(), whose lag-1 feature is the latest value
                let next = target.len();
                for (c, held) in covs.iter_mut().zip(&held_cov) {
                    c.push(*held);
                }
                let count = (next - max_lag + 1).min(context_len);
                let first = next + 1 - count;
                let tokens = build_tokens(&target, &covs, &cfg.lag_set, first, count)?;
                let params = forward_step(cfg, weights, &tokens)?;
                let last = *params.last().expect("count >= 1");
                let draw = last.mu + last.sigma * standard_t_draw(last.nu, &mut rng);
                draws.push(draw);
                params_log.push(last);
                target.push(draw);
            }
            Ok((draws, params_log))
        },
    )?;

    let params_per_step = paths
        .first()
        .map(|(_, p)| p.clone())
        .unwrap_or_default();
    let sample_paths = paths.into_iter().map(|(d, _)| d).collect();
    Ok(ForecastDistribution {
        horizon,
        params_per_step,
        sample_paths,
        norm_stats,
    })
}
