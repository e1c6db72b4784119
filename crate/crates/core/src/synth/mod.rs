//! Deterministic grow-tent simulator: daily environmental cycles, Poisson
//! watering events, soil-moisture decay accelerated by heat, and a green
//! channel coupled to moisture — the ground-truth oracle for training,
//! ablation-direction, and coverage tests.

pub mod corpus;

pub use corpus::{ar1_series, pretrain_corpus, CorpusSeries, SeriesKind};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::fusion::EnvRecord;
use crate::pheno::{derive_ratios, PhenotypeRecord};
use crate::timefmt::format_utc;

/// Daily sinusoidal cycle: mean + amplitude * sin(day phase) + noise.
#[derive(Debug, Clone, Copy)]
pub struct CycleSpec {
    pub mean: f64,
    pub amplitude: f64,
    pub noise: f64,
}

/// Simulator parameters. Defaults give a learnable desk-scale regime where
/// temperature visibly modulates moisture decay.
#[derive(Debug, Clone)]
pub struct TentSimConfig {
    pub seed: u64,
    pub days: u32,
    /// Environment/grid cadence.
    pub step_seconds: u64,
    /// Camera cadence for phenotype rows.
    pub pheno_step_seconds: u64,
    pub start: DateTime<Utc>,
    /// Moisture decay constant at mean temperature, in minutes.
    pub tau_minutes: f64,
    /// Poisson mean of watering events per day.
    pub watering_rate_per_day: f64,
    /// Moisture fraction below which the plant counts as stressed.
    pub stress_threshold: f64,
    /// How strongly above-mean temperature shortens the decay constant.
    pub temp_moisture_coupling: f64,
    /// Std of the slow autocorrelated temperature wander (HVAC drift) that
    /// modulates moisture decay on top of the daily cycle.
    pub temp_wander: f64,
    pub g_base: f64,
    pub g_noise: f64,
    pub temp: CycleSpec,
    pub rh: CycleSpec,
    pub light: CycleSpec,
    pub voc: CycleSpec,
    pub co2: CycleSpec,
    pub pm25: CycleSpec,
}

impl Default for TentSimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            days: 7,
            step_seconds: 60,
            pheno_step_seconds: 10,
            start: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            tau_minutes: 1440.0,
            watering_rate_per_day: 0.8,
            stress_threshold: 0.3,
            temp_moisture_coupling: 2.5,
            temp_wander: 1.0,
            g_base: 170.0,
            g_noise: 1.5,
            temp: CycleSpec {
                mean: 24.0,
                amplitude: 3.0,
                noise: 0.2,
            },
            rh: CycleSpec {
                mean: 55.0,
                amplitude: 8.0,
                noise: 0.8,
            },
            light: CycleSpec {
                mean: 300.0,
                amplitude: 250.0,
                noise: 5.0,
            },
            voc: CycleSpec {
                mean: 150.0,
                amplitude: 40.0,
                noise: 8.0,
            },
            co2: CycleSpec {
                mean: 600.0,
                amplitude: 80.0,
                noise: 12.0,
            },
            pm25: CycleSpec {
                mean: 8.0,
                amplitude: 3.0,
                noise: 0.6,
            },
        }
    }
}

/// One row of the stress label series.
#[derive(Debug, Clone, PartialEq)]
pub struct StressRecord {
    pub timestamp: DateTime<Utc>,
    pub moisture: f64,
    pub stressed: bool,
}

/// Full simulator output in the fusion CSV schemas.
#[derive(Debug, Clone)]
pub struct TentData {
    pub env: Vec<EnvRecord>,
    pub pheno: Vec<PhenotypeRecord>,
    pub stress: Vec<StressRecord>,
}

/// Exact header of the stress label CSV.
pub const STRESS_CSV_HEADER: &str = "timestamp,moisture,stressed";

fn day_phase(t_seconds: u64) -> f64 {
    2.0 * std::f64::consts::PI * (t_seconds % 86_400) as f64 / 86_400.0
}

/// Moisture decay constant in seconds at temperature `temp`: heat above the
/// daily mean shortens it by the coupling factor. The excess is measured in
/// units of the cycle amplitude (absolute degrees when the amplitude is small).
fn tau_effective_seconds(cfg: &TentSimConfig, temp: f64) -> f64 {
    let excess = ((temp - cfg.temp.mean) / cfg.temp.amplitude.max(1.0)).max(0.0);
    cfg.tau_minutes * 60.0 / (1.0 + cfg.temp_moisture_coupling * excess)
}

/// Runs the simulator. Moisture follows dm/dt = -m/tau_eff integrated with
/// the exact per-step exponential update (equal to the closed form between
/// events), jumping to 1.0 at each watering event. Deterministic per seed.
pub fn simulate_tent(cfg: &TentSimConfig) -> TentData {
    assert!(cfg.days >= 1);
    assert!(cfg.step_seconds >= 1 && cfg.pheno_step_seconds >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total_seconds = cfg.days as u64 * 86_400;
    let dt = cfg.pheno_step_seconds.min(cfg.step_seconds);
    let steps = total_seconds / dt;
    let p_water = cfg.watering_rate_per_day * dt as f64 / 86_400.0;

    let mut env = Vec::new();
    let mut pheno = Vec::new();
    let mut stress = Vec::new();

    // plant size grows logistically, saturating well before the end of the
    // run so the late (test) span sees a mature plant
    let growth = |t: u64| -> f64 {
        let x = t as f64 / total_seconds as f64;
        1.0 / (1.0 + (-14.0 * (x - 0.12)).exp())
    };

    // slow AR(1) wander with a 2-hour time constant
    let wander_phi = (-(dt as f64) / 7200.0).exp();
    let wander_sigma = cfg.temp_wander * (1.0 - wander_phi * wander_phi).sqrt();
    let mut wander = 0.0f64;

    let mut moisture: f64 = 1.0;
    for i in 0..=steps {
        let t = i * dt;
        let ts = cfg.start + Duration::seconds(t as i64);
        let phase = day_phase(t);
        // the temperature process (cycle + wander) drives the dynamics and is
        // what the sensor reads, up to white measurement noise
        if i > 0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            wander = wander_phi * wander + wander_sigma * z;
        }
        let temp_process = cfg.temp.mean
            + cfg.temp.amplitude * (phase - 0.5 * std::f64::consts::PI).sin()
            + wander;

        if i > 0 {
            if rng.gen::<f64>() < p_water {
                moisture = 1.0;
            } else {
                let tau = tau_effective_seconds(cfg, temp_process);
                moisture *= (-(dt as f64) / tau).exp();
            }
        }
        let stressed = moisture < cfg.stress_threshold;

        if t % cfg.pheno_step_seconds == 0 {
            let noise = |rng: &mut ChaCha8Rng, s: f64| -> f64 {
                let z: f64 = StandardNormal.sample(rng);
                z * s
            };
            let g = (cfg.g_base * (0.7 + 0.3 * moisture) + noise(&mut rng, cfg.g_noise))
                .clamp(0.0, 255.0);
            // red/blue weakly anti-correlated with the green signal
            let r = (80.0 * (1.0 + 0.08 * (0.5 - moisture)) + noise(&mut rng, 1.0))
                .clamp(0.0, 255.0);
            let b = (60.0 * (1.0 + 0.05 * (0.5 - moisture)) + noise(&mut rng, 1.0))
                .clamp(0.0, 255.0);

            let scale = growth(t);
            // wilting under stress: the plant droops (height down) and its
            // silhouette thins, taking the mask area down about 2% and both
            // ratio features down about 1%
            let (h_dip, f_dip) = if stressed { (0.99, 0.99) } else { (1.0, 1.0) };
            let height_f = (40.0 + 160.0 * scale) * h_dip;
            let width_f = (40.0 + 160.0 * scale) * 0.85;
            let fill = 0.62 * f_dip * (1.0 + noise(&mut rng, 0.003));
            let mask_height = height_f.round().max(1.0) as u32;
            let mask_width = width_f.round().max(1.0) as u32;
            let bbox = mask_height as u64 * mask_width as u64;
            let mask_area = ((height_f * width_f * fill).round() as u64).clamp(1, bbox);
            let (area_to_height, height_to_width) =
                derive_ratios(mask_area, mask_height, mask_width).expect("positive dims");
            pheno.push(PhenotypeRecord {
                timestamp: ts,
                object_id: 0,
                mean_r: r,
                mean_g: g,
                mean_b: b,
                mask_area,
                mask_height,
                mask_width,
                area_to_height,
                height_to_width,
            });
        }

        if t % cfg.step_seconds == 0 {
            let cycle = |rng: &mut ChaCha8Rng, spec: &CycleSpec, shift: f64, floor: f64| {
                let z: f64 = StandardNormal.sample(rng);
                (spec.mean + spec.amplitude * (phase - shift).sin() + z * spec.noise).max(floor)
            };
            let half_pi = 0.5 * std::f64::consts::PI;
            let temp_meas_noise: f64 = StandardNormal.sample(&mut rng);
            let temp_c = temp_process + temp_meas_noise * cfg.temp.noise;
            let rh_pct = cycle(&mut rng, &cfg.rh, -half_pi, 0.0).min(100.0);
            let light = cycle(&mut rng, &cfg.light, half_pi, 0.0);
            let voc_ppb = cycle(&mut rng, &cfg.voc, 0.0, 0.0);
            let co2_ppm = cycle(&mut rng, &cfg.co2, 0.0, 0.0);
            let pm25_ugm3 = cycle(&mut rng, &cfg.pm25, 0.0, 0.0);
            env.push(EnvRecord {
                timestamp: ts,
                temp_c,
                rh_pct,
                light,
                voc_ppb,
                co2_ppm,
                pm25_ugm3,
            });
            stress.push(StressRecord {
                timestamp: ts,
                moisture,
                stressed,
            });
        }
    }

    TentData { env, pheno, stress }
}

/// Writes the stress label series CSV.
pub fn write_stress_csv<W: std::io::Write>(
    records: &[StressRecord],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "{STRESS_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{:.6},{}",
            format_utc(r.timestamp),
            r.moisture,
            u8::from(r.stressed)
        )?;
    }
    Ok(())
}
