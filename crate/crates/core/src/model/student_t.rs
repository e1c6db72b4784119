//! Student-t output head: per-step distribution parameters, likelihood
//! evaluation, and seeded sampling via the normal/chi-square composition.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::numerics::student_t_nll_scalar;

use super::ModelError;

/// Location-scale Student-t parameters for one forecast step.
/// The head constraints guarantee nu > 2 and sigma > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentTParams {
    pub nu: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl StudentTParams {
    /// Variance nu/(nu-2) scaled by sigma^2; finite because nu > 2.
    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma * self.nu / (self.nu - 2.0)
    }
}

/// Mean negative log likelihood of `targets` under per-position parameters.
pub fn nll_loss(params: &[StudentTParams], targets: &[f64]) -> Result<f64, ModelError> {
    assert_eq!(params.len(), targets.len(), "one target per position");
    let mut total = 0.0;
    for (p, &y) in params.iter().zip(targets) {
        if p.sigma <= 0.0 {
            return Err(ModelError::NonPositiveSigma(p.sigma));
        }
        total += student_t_nll_scalar(y, p.nu, p.mu, p.sigma);
    }
    Ok(total / params.len() as f64)
}

/// One standard Student-t draw: Z * sqrt(nu / chi2_nu).
pub fn standard_t_draw<R: Rng>(nu: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let chi2 = ChiSquared::new(nu).expect("nu > 0").sample(rng);
    z * (nu / chi2).sqrt()
}

/// Draws `n` values mu + sigma * T with T ~ Student-t(nu); deterministic for
/// a given generator state.
pub fn sample_student_t<R: Rng>(params: &StudentTParams, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| params.mu + params.sigma * standard_t_draw(params.nu, rng))
        .collect()
}
