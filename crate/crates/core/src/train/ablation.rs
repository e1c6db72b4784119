//! Zero-shot vs fine-tuning modality ablation: for each feature combination,
//! pretrain on the synthetic corpus, evaluate with no updates (zero-shot),
//! continue training on the plant train split with early stopping
//! (fine-tuning), and evaluate both on the held-out test split with rolled-out
//! Monte-Carlo forecasts.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::exec::{self, derive_seed};
use crate::fusion::{
    engineer_features, make_windows, normalize, split_series, FeatureCombo, FusedSeries,
    NormStats,
};
use crate::model::{forecast_autoregressive, init_weights, CovariatePolicy, ModelConfig};
use crate::numerics::ParamSet;
use crate::synth::CorpusSeries;

use super::fit::{fit, Windowed};
use super::metrics::{crps_samples, point_metrics, MetricReport};
use super::{TrainConfig, TrainError};

/// Evaluation scenario of one ablation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ZeroShot,
    FineTune,
}

impl Scenario {
    pub fn label(&self) -> &'static str {
        match self {
            Scenario::ZeroShot => "Zero-shot",
            Scenario::FineTune => "Fine-tuning",
        }
    }
}

/// One row of the ablation report.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub scenario: Scenario,
    pub combo: FeatureCombo,
    pub report: MetricReport,
    pub n_eval_windows: usize,
}

impl AblationRow {
    /// Row label in the reporting scheme, e.g. `Zero-shot-RGB with ratios`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.scenario.label(), self.combo.label())
    }
}

/// Windowing, evaluation, and corpus-pretraining knobs of the harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_context_len")]
    pub context_len: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_eval_stride")]
    pub eval_stride: usize,
    #[serde(default = "default_max_eval_windows")]
    pub max_eval_windows: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_corpus_series")]
    pub corpus_series: usize,
    #[serde(default = "default_corpus_length")]
    pub corpus_length: usize,
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_pretrain_patience")]
    pub pretrain_patience: usize,
    #[serde(default = "default_corpus_stride")]
    pub corpus_stride: usize,
    /// Number of independent pretraining runs; the one with the best corpus
    /// validation loss is kept.
    #[serde(default = "default_pretrain_restarts")]
    pub pretrain_restarts: usize,
}

fn default_context_len() -> usize {
    64
}
fn default_horizon() -> usize {
    24
}
fn default_stride() -> usize {
    16
}
fn default_eval_stride() -> usize {
    24
}
fn default_max_eval_windows() -> usize {
    64
}
fn default_eval_samples() -> usize {
    32
}
fn default_corpus_series() -> usize {
    32
}
fn default_corpus_length() -> usize {
    512
}
fn default_pretrain_epochs() -> usize {
    8
}
fn default_pretrain_patience() -> usize {
    8
}
fn default_corpus_stride() -> usize {
    16
}
fn default_pretrain_restarts() -> usize {
    3
}

impl Default for AblationConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

/// Rolled-out evaluation over one normalized test split.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: MetricReport,
    pub n_windows: usize,
    pub n_points: usize,
    /// Fraction of (window, step) actuals inside the central 80% interval.
    pub coverage80: f64,
}

/// Forecasts every window of `data` autoregressively with `eval_samples`
/// Monte-Carlo paths and pools per-step metrics over all windows.
/// Values are de-normalized before scoring when the channel carries stats.
pub fn evaluate_windows(
    model_cfg: &ModelConfig,
    weights: &ParamSet,
    data: Windowed<'_>,
    eval_samples: usize,
    seed: u64,
) -> Result<EvalSummary, TrainError> {
    if data.windows.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let (target_ch, cov_chs) = data.series.target_and_covariates()?;
    let stats = target_ch.stats.unwrap_or(NormStats { mean: 0.0, std: 1.0 });
    let context_len = data.windows.context_len;
    let horizon = data.windows.horizon;

    struct WindowEval {
        preds: Vec<f64>,
        actuals: Vec<f64>,
        crps: Vec<f64>,
        hits: usize,
    }

    let per_window = exec::try_map_collect(
        (0..data.windows.len()).collect::<Vec<_>>(),
        |i| -> Result<WindowEval, TrainError> {
            let input = data.windows.input_range(i);
            let target_hist = target_ch.values[input.clone()].to_vec();
            let cov_hist: Vec<Vec<f64>> = cov_chs
                .iter()
                .map(|c| c.values[input.clone()].to_vec())
                .collect();
            let forecast = forecast_autoregressive(
                model_cfg,
                weights,
                &target_hist,
                &cov_hist,
                context_len,
                horizon,
                eval_samples,
                CovariatePolicy::HoldLast,
                derive_seed(seed, i as u64),
                (stats.mean, stats.std),
            )?;
            let target_range = data.windows.target_range(i);
            let mut preds = Vec::with_capacity(horizon);
            let mut actuals = Vec::with_capacity(horizon);
            let mut crps = Vec::with_capacity(horizon);
            let mut hits = 0usize;
            for (step, t_idx) in target_range.enumerate() {
                let actual = target_ch.values[t_idx] * stats.std + stats.mean;
                let mut samples = forecast.step_samples_denormalized(step);
                samples.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                let n = samples.len();
                let q = |p: f64| samples[((p * (n - 1) as f64).round() as usize).min(n - 1)];
                if actual >= q(0.1) && actual <= q(0.9) {
                    hits += 1;
                }
                preds.push(samples.iter().sum::<f64>() / n as f64);
                actuals.push(actual);
                crps.push(crps_samples(&samples, actual)?);
            }
            Ok(WindowEval {
                preds,
                actuals,
                crps,
                hits,
            })
        },
    )?;

    let mut preds = Vec::new();
    let mut actuals = Vec::new();
    let mut crps_all = Vec::new();
    let mut hits = 0usize;
    for w in per_window {
        preds.extend(w.preds);
        actuals.extend(w.actuals);
        crps_all.extend(w.crps);
        hits += w.hits;
    }
    let n_points = preds.len();
    let pm = point_metrics(&preds, &actuals)?;
    let crps_mean = crps_all.iter().sum::<f64>() / n_points as f64;
    let abs_actual: f64 = actuals.iter().map(|a| a.abs()).sum();
    let crps_normalized = if abs_actual > 0.0 {
        crps_all.iter().sum::<f64>() / abs_actual
    } else {
        crps_mean
    };
    Ok(EvalSummary {
        report: MetricReport {
            crps_mean,
            crps_normalized,
            mse: pm.mse,
            mae: pm.mae,
            rmse: pm.rmse,
            pearson_r: pm.pearson_r,
        },
        n_windows: data.windows.len(),
        n_points,
        coverage80: hits as f64 / n_points as f64,
    })
}

/// Builds per-series corpus parts, every sixth series held out for validation.
fn corpus_parts(
    corpus: &[CorpusSeries],
    n_covariates: usize,
    step_seconds: u64,
) -> Result<(Vec<FusedSeries>, Vec<FusedSeries>), TrainError> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, s) in corpus.iter().enumerate() {
        if s.covariates.len() < n_covariates {
            return Err(TrainError::Model(crate::model::ModelError::BadConfig(
                format!(
                    "corpus series has {} covariates, combo needs {n_covariates}",
                    s.covariates.len()
                ),
            )));
        }
        let trimmed = CorpusSeries {
            kind: s.kind,
            target: s.target.clone(),
            covariates: s.covariates[..n_covariates].to_vec(),
        };
        let fused = trimmed.to_fused(step_seconds);
        if i % 6 == 5 {
            val.push(fused);
        } else {
            train.push(fused);
        }
    }
    Ok((train, val))
}

/// Pretrains one model per covariate width on the corpus. Runs several
/// independent restarts with derived seeds and keeps the weights with the
/// best corpus validation loss.
pub fn pretrain_on_corpus(
    model_cfg: &ModelConfig,
    ablation: &AblationConfig,
    corpus: &[CorpusSeries],
    seed: u64,
) -> Result<ParamSet, TrainError> {
    let (train_series, val_series) =
        corpus_parts(corpus, model_cfg.n_covariates, 60)?;
    let lag_margin = model_cfg.lag_set.max_lag();
    let mk = |s: &FusedSeries| {
        make_windows(
            s,
            ablation.context_len,
            ablation.horizon,
            ablation.corpus_stride,
            lag_margin,
        )
    };
    let train_windows: Vec<_> = train_series.iter().map(mk).collect();
    let val_windows: Vec<_> = val_series.iter().map(mk).collect();
    let train_parts: Vec<Windowed> = train_series
        .iter()
        .zip(&train_windows)
        .map(|(s, w)| Windowed::new(s, w))
        .collect();
    let val_parts: Vec<Windowed> = val_series
        .iter()
        .zip(&val_windows)
        .map(|(s, w)| Windowed::new(s, w))
        .collect();

    let restarts = ablation.pretrain_restarts.max(1);
    let mut best: Option<(f64, ParamSet)> = None;
    for r in 0..restarts {
        let restart_seed = derive_seed(seed, 7000 + r as u64);
        let pretrain_cfg = TrainConfig {
            max_epochs: ablation.pretrain_epochs,
            patience: ablation.pretrain_patience,
            seed: restart_seed,
            ..ablation.train.clone()
        };
        let init = init_weights(model_cfg, restart_seed);
        let result = fit(&pretrain_cfg, model_cfg, init, &train_parts, &val_parts)?;
        if best
            .as_ref()
            .map_or(true, |(loss, _)| result.best_val_loss < *loss)
        {
            best = Some((result.best_val_loss, result.weights));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Splits, normalizes (train stats only), and windows one engineered series.
struct ComboData {
    train: FusedSeries,
    val: FusedSeries,
    test: FusedSeries,
}

fn prepare_combo(series: &FusedSeries, combo: FeatureCombo) -> Result<ComboData, TrainError> {
    let engineered = engineer_features(series, combo)?;
    let (train_raw, val_raw, test_raw) = split_series(&engineered);
    let train = normalize(&train_raw, None)?;
    let stats: Vec<NormStats> = train
        .channels
        .iter()
        .map(|c| c.stats.expect("stats recorded"))
        .collect();
    let val = normalize(&val_raw, Some(&stats))?;
    let test = normalize(&test_raw, Some(&stats))?;
    Ok(ComboData { train, val, test })
}

/// Runs the full 2x4 grid. Cells of one combo share the pretrained weights
/// ("pretrain once per combo"); the four combos run as independent parallel
/// jobs with derived seeds. Rows come back in the reporting order: all
/// zero-shot rows, then all fine-tuning rows.
pub fn run_ablation(
    series: &FusedSeries,
    model_template: &ModelConfig,
    ablation: &AblationConfig,
    corpus: &[CorpusSeries],
) -> Result<Vec<AblationRow>, TrainError> {
    let jobs: Vec<(usize, FeatureCombo)> =
        FeatureCombo::ALL.iter().copied().enumerate().collect();

    let per_combo = exec::try_map_collect(jobs, |(combo_idx, combo)| {
        let base_seed = derive_seed(ablation.train.seed, 100 + combo_idx as u64);
        let data = prepare_combo(series, combo)?;
        let model_cfg = ModelConfig {
            n_covariates: data.train.channels.len() - 1,
            ..model_template.clone()
        };
        let lag_margin = model_cfg.lag_set.max_lag();

        let pretrained =
            pretrain_on_corpus(&model_cfg, ablation, corpus, derive_seed(base_seed, 1))?;

        let w_train = make_windows(
            &data.train,
            ablation.context_len,
            ablation.horizon,
            ablation.stride,
            lag_margin,
        );
        let w_val = make_windows(
            &data.val,
            ablation.context_len,
            ablation.horizon,
            ablation.stride,
            lag_margin,
        );
        let mut w_test = make_windows(
            &data.test,
            ablation.context_len,
            ablation.horizon,
            ablation.eval_stride,
            lag_margin,
        );
        w_test.truncate(ablation.max_eval_windows);
        let test_part = Windowed::new(&data.test, &w_test);

        let zero_shot = evaluate_windows(
            &model_cfg,
            &pretrained,
            test_part,
            ablation.eval_samples,
            derive_seed(base_seed, 3),
        )?;

        let finetune_cfg = TrainConfig {
            seed: derive_seed(base_seed, 2),
            ..ablation.train.clone()
        };
        let tuned = fit(
            &finetune_cfg,
            &model_cfg,
            pretrained,
            &[Windowed::new(&data.train, &w_train)],
            &[Windowed::new(&data.val, &w_val)],
        )?;
        let fine_tuned = evaluate_windows(
            &model_cfg,
            &tuned.weights,
            test_part,
            ablation.eval_samples,
            derive_seed(base_seed, 4),
        )?;

        Ok::<_, TrainError>((
            AblationRow {
                scenario: Scenario::ZeroShot,
                combo,
                report: zero_shot.report,
                n_eval_windows: zero_shot.n_windows,
            },
            AblationRow {
                scenario: Scenario::FineTune,
                combo,
                report: fine_tuned.report,
                n_eval_windows: fine_tuned.n_windows,
            },
        ))
    })?;

    let mut rows = Vec::with_capacity(8);
    for (zs, _) in &per_combo {
        rows.push(zs.clone());
    }
    for (_, ft) in per_combo {
        rows.push(ft);
    }
    Ok(rows)
}

/// Writes the report CSV in the documented schema.
pub fn write_report_csv<W: Write>(rows: &[AblationRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "scenario,combo,crps,crps_normalized,mse,mae,rmse,pearson_r")?;
    for row in rows {
        let r = &row.report;
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            row.scenario.label(),
            row.combo.label(),
            r.crps_mean,
            r.crps_normalized,
            r.mse,
            r.mae,
            r.rmse,
            r.pearson_r
        )?;
    }
    Ok(())
}

/// JSON twin of the report, one object per row with the Table-style label.
pub fn write_report_json<W: Write>(rows: &[AblationRow], mut w: W) -> std::io::Result<()> {
    let objs: Vec<serde_json::Value> = rows
        .iter()
        .map(|row| {
            serde_json::json!({
                "label": row.label(),
                "scenario": row.scenario,
                "combo": row.combo.tag(),
                "crps": row.report.crps_mean,
                "crps_normalized": row.report.crps_normalized,
                "mse": row.report.mse,
                "mae": row.report.mae,
                "rmse": row.report.rmse,
                "pearson_r": row.report.pearson_r,
                "n_eval_windows": row.n_eval_windows,
            })
        })
        .collect();
    let text = serde_json::to_string_pretty(&objs)?;
    writeln!(w, "{text}")?;
    Ok(())
}
