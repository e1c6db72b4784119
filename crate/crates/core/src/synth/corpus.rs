//! Multi-domain pretraining corpus: a seeded mixture of AR(1), sinusoid plus
//! trend, step-change, and damped-oscillation series, z-scored, with covariate
//! channels that mix informative leading indicators and pure-noise
//! distractors (so a pretrained model learns to exploit covariates that carry
//! signal about the target's future).

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::exec;
use crate::fusion::{Channel, FusedSeries};

/// Generator family of one corpus series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeriesKind {
    /// AR(1) whose coefficient wanders inside [phi_lo, phi_hi]; the latent
    /// driver the covariates reveal is the current coefficient.
    Ar1 { phi_lo: f64, phi_hi: f64 },
    SinusoidTrend,
    StepChange,
    DampedOscillation,
}

/// One univariate series with covariates, z-scored per channel.
#[derive(Debug, Clone)]
pub struct CorpusSeries {
    pub kind: SeriesKind,
    pub target: Vec<f64>,
    pub covariates: Vec<Vec<f64>>,
}

impl CorpusSeries {
    /// Wraps the series as a fused series (target channel `mean_g`) so the
    /// training loop can consume it directly. Covariates keep generic names.
    pub fn to_fused(&self, step_seconds: u64) -> FusedSeries {
        let n = self.target.len();
        let mut channels = vec![Channel {
            name: crate::fusion::TARGET_CHANNEL.into(),
            values: self.target.clone(),
            missing: vec![false; n],
            stats: None,
        }];
        for (j, cov) in self.covariates.iter().enumerate() {
            channels.push(Channel {
                name: format!("cov_{j}"),
                values: cov.clone(),
                missing: vec![false; n],
                stats: None,
            });
        }
        FusedSeries {
            start: DateTime::<Utc>::UNIX_EPOCH,
            step_seconds,
            channels,
        }
    }
}

/// Plain AR(1) recurrence x_{t+1} = phi * x_t + sigma * eps_t, un-normalized.
/// Returns (series, innovations); innovations[t] is the noise that produced
/// x_{t+1}.
pub fn ar1_series<R: Rng>(
    phi: f64,
    sigma: f64,
    x0: f64,
    length: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(length);
    let mut eps = vec![0.0; length];
    xs.push(x0);
    for t in 1..length {
        let z: f64 = StandardNormal.sample(rng);
        eps[t - 1] = z;
        xs.push(phi * xs[t - 1] + sigma * z);
    }
    (xs, eps)
}

fn z_score(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let std = if std == 0.0 { 1.0 } else { std };
    for v in values.iter_mut() {
        *v = (*v - mean) / std;
    }
}

/// A target series plus the latent driver a leading-indicator covariate can
/// reveal (the information arrives `lead` steps before it shows in the
/// target). Driver timescales range from intra-window wiggles to waves far
/// longer than any context window, so transfer sees pinned covariate levels
/// as in-distribution inputs.
fn generate_target(kind: SeriesKind, length: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    match kind {
        SeriesKind::Ar1 { phi_lo, phi_hi } => {
            // the reversion speed itself wanders; covariates that reveal it
            // predict how fast the level will relax
            let tau = rng.gen_range(24.0..300.0);
            let wander_phi = (-(1.0f64) / tau).exp();
            let wander_sigma = (1.0 - wander_phi * wander_phi).sqrt();
            let mut w = 0.0f64;
            let mut xs = Vec::with_capacity(length);
            let mut driver = Vec::with_capacity(length);
            xs.push(0.0);
            let mid = 0.5 * (phi_lo + phi_hi);
            let half = 0.5 * (phi_hi - phi_lo);
            let mut phi_t = mid;
            driver.push(phi_t);
            for t in 1..length {
                let zw: f64 = StandardNormal.sample(rng);
                w = wander_phi * w + 1.5 * wander_sigma * zw;
                phi_t = (mid + half * w.tanh()).clamp(phi_lo, phi_hi);
                let z: f64 = StandardNormal.sample(rng);
                xs.push(phi_t * xs[t - 1] + z);
                driver.push(phi_t);
            }
            (xs, driver)
        }
        SeriesKind::SinusoidTrend => {
            let period = rng.gen_range(24.0..(1.2 * length as f64));
            let amp = rng.gen_range(0.5..2.0);
            let slope = rng.gen_range(-0.01..0.01);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let noise = 0.15;
            let mut xs = Vec::with_capacity(length);
            let mut driver = Vec::with_capacity(length);
            for t in 0..length {
                let angle = std::f64::consts::TAU * t as f64 / period + phase;
                let z: f64 = StandardNormal.sample(rng);
                xs.push(amp * angle.sin() + slope * t as f64 + noise * z);
                // phase-advanced clean oscillation
                driver.push((angle + std::f64::consts::TAU * 0.05).sin());
            }
            (xs, driver)
        }
        SeriesKind::StepChange => {
            let n_jumps = rng.gen_range(2..6);
            let mut schedule = vec![0.0f64; length];
            for _ in 0..n_jumps {
                let at = rng.gen_range(length / 8..length);
                let jump = rng.gen_range(-2.0..2.0);
                for v in schedule[at..].iter_mut() {
                    *v += jump;
                }
            }
            let lead = 4usize;
            let mut xs = Vec::with_capacity(length);
            let mut driver = Vec::with_capacity(length);
            for t in 0..length {
                let z: f64 = StandardNormal.sample(rng);
                xs.push(schedule[t] + 0.1 * z);
                // the covariate sees the step `lead` ticks early
                driver.push(schedule[(t + lead).min(length - 1)]);
            }
            (xs, driver)
        }
        SeriesKind::DampedOscillation => {
            let period = rng.gen_range(16.0..(0.5 * length as f64));
            let decay = rng.gen_range(0.3..1.2) * length as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut xs = Vec::with_capacity(length);
            let mut driver = Vec::with_capacity(length);
            for t in 0..length {
                let angle = std::f64::consts::TAU * t as f64 / period + phase;
                let envelope = (-(t as f64) / decay).exp();
                let z: f64 = StandardNormal.sample(rng);
                xs.push(2.0 * envelope * angle.sin() + 0.1 * z);
                driver.push(envelope * (angle + std::f64::consts::TAU * 0.05).sin());
            }
            (xs, driver)
        }
    }
}

/// Generates `n_series` series of `length` steps with `n_covariates` channels
/// each. Every covariate is a noisy view of the latent driver at a
/// per-channel signal-to-noise ratio drawn from a wide range, so some slots
/// are nearly clean leading indicators and others are noise-dominated — the
/// pretrained model has to weight covariates by usefulness rather than by
/// position. Deterministic per seed; series generate on derived seeds.
pub fn pretrain_corpus(
    seed: u64,
    n_series: usize,
    length: usize,
    n_covariates: usize,
) -> Vec<CorpusSeries> {
    assert!(n_series >= 1 && length >= 2);
    exec::map_collect((0..n_series).collect::<Vec<_>>(), move |idx| {
        let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(seed, idx as u64));
        let kind = match idx % 4 {
            0 => SeriesKind::Ar1 {
                phi_lo: 0.5,
                phi_hi: 0.95,
            },
            1 => SeriesKind::SinusoidTrend,
            2 => SeriesKind::StepChange,
            _ => SeriesKind::DampedOscillation,
        };
        let (mut target, driver) = generate_target(kind, length, &mut rng);
        z_score(&mut target);

        // covariates behave like real sensor channels: a signed view of the
        // slow driver plus slowly-wandering (not white) channel noise, so
        // sustained coherent excursions are in-distribution at transfer time
        let covariates: Vec<Vec<f64>> = (0..n_covariates)
            .map(|_| {
                let noise_scale = rng.gen_range(0.1..1.0);
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let ou_tau = rng.gen_range(8.0..120.0);
                let ou_phi = (-(1.0f64) / ou_tau).exp();
                let ou_sigma = (1.0 - ou_phi * ou_phi).sqrt();
                let mut ou = 0.0f64;
                let mut cov: Vec<f64> = driver
                    .iter()
                    .map(|d| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        ou = ou_phi * ou + ou_sigma * z;
                        sign * d + noise_scale * ou
                    })
                    .collect();
                z_score(&mut cov);
                cov
            })
            .collect();

        CorpusSeries {
            kind,
            target,
            covariates,
        }
    })
}
