//! Mini-batch training loop with cosine annealing, checkpointing on strict
//! validation improvement, and patience-based early stopping.
//!
//! Training data arrives as one or more (series, windows) parts so a fit can
//! span many corpus series as easily as one plant series; windows never cross
//! part boundaries.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::exec::derive_seed;
use crate::fusion::{FusedSeries, WindowSet};
use crate::model::{build_tokens, loss_graph, ModelConfig};
use crate::numerics::{GradMap, ParamSet, Tensor};

use super::{adam_step, cosine_lr, AdamState, EarlyStopping, StopDecision, TrainConfig, TrainError};

/// One row of the training history.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Best checkpointed weights plus the per-epoch history.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub weights: ParamSet,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// A normalized series with its window geometry.
#[derive(Debug, Clone, Copy)]
pub struct Windowed<'a> {
    pub series: &'a FusedSeries,
    pub windows: &'a WindowSet,
}

impl<'a> Windowed<'a> {
    pub fn new(series: &'a FusedSeries, windows: &'a WindowSet) -> Self {
        Self { series, windows }
    }
}

/// Token matrix and per-position targets for one window. Tokens cover the
/// context positions; each token's target is the series value at the token's
/// own position (predicted from strictly earlier values via the lags).
pub(crate) fn window_batch(
    cfg: &ModelConfig,
    data: &Windowed<'_>,
    idx: usize,
) -> Result<(Tensor, Vec<f64>), TrainError> {
    let (target_ch, cov_chs) = data.series.target_and_covariates()?;
    let covs: Vec<Vec<f64>> = cov_chs.iter().map(|c| c.values.clone()).collect();
    let range = data.windows.token_range(idx);
    let tokens = build_tokens(
        &target_ch.values,
        &covs,
        &cfg.lag_set,
        range.start,
        range.len(),
    )?;
    let targets = target_ch.values[range].to_vec();
    Ok((tokens, targets))
}

fn total_windows(parts: &[Windowed<'_>]) -> usize {
    parts.iter().map(|p| p.windows.len()).sum()
}

/// Mean teacher-forced loss over all windows of all parts, dropout off.
pub fn validation_loss(
    cfg: &ModelConfig,
    weights: &ParamSet,
    parts: &[Windowed<'_>],
) -> Result<f64, TrainError> {
    let n = total_windows(parts);
    if n == 0 {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut total = 0.0;
    for part in parts {
        for i in 0..part.windows.len() {
            let (tokens, targets) = window_batch(cfg, part, i)?;
            let (tape, loss) = loss_graph(cfg, weights, &tokens, &targets, 0, false)?;
            total += tape.value(loss).item();
        }
    }
    Ok(total / n as f64)
}

fn accumulate(sum: &mut GradMap, grads: GradMap) {
    for (name, g) in grads {
        match sum.get_mut(&name) {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => {
                sum.insert(name, g);
            }
        }
    }
}

/// Trains from `init` weights, checkpointing on strict validation improvement
/// and stopping after `patience` consecutive non-improving epochs or at
/// `max_epochs`. Within-fit computation is sequential and deterministic.
pub fn fit(
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    init: ParamSet,
    train: &[Windowed<'_>],
    val: &[Windowed<'_>],
) -> Result<FitResult, TrainError> {
    let n_windows = total_windows(train);
    if n_windows == 0 {
        return Err(TrainError::EmptySplit("train"));
    }
    if total_windows(val) == 0 {
        return Err(TrainError::EmptySplit("validation"));
    }
    for part in train {
        if part.windows.lag_margin < model_cfg.lag_set.max_lag() {
            return Err(TrainError::Model(crate::model::ModelError::BadConfig(
                format!(
                    "window lag_margin {} smaller than max lag {}",
                    part.windows.lag_margin,
                    model_cfg.lag_set.max_lag()
                ),
            )));
        }
    }

    // flat index of (part, window) pairs in a fixed order
    let flat: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(p, part)| (0..part.windows.len()).map(move |w| (p, w)))
        .collect();

    let mut weights = init;
    let mut best_weights = weights.clone();
    let mut best_epoch = 0usize;
    let mut stopper = EarlyStopping::new(train_cfg.patience);
    let mut adam = AdamState::new();
    let mut history = Vec::new();
    let mut step = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        let lr = cosine_lr(epoch, train_cfg.max_epochs, train_cfg.lr0);
        let mut order: Vec<usize> = (0..flat.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train_cfg.seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(train_cfg.batch_size.max(1)) {
            let mut grad_sum = GradMap::new();
            let mut batch_loss = 0.0;
            for &flat_idx in batch {
                let (p, widx) = flat[flat_idx];
                let (tokens, targets) = window_batch(model_cfg, &train[p], widx)?;
                let dropout_seed =
                    derive_seed(train_cfg.seed, ((epoch as u64) << 32) | flat_idx as u64);
                let (tape, loss) =
                    loss_graph(model_cfg, &weights, &tokens, &targets, dropout_seed, true)?;
                batch_loss += tape.value(loss).item();
                accumulate(&mut grad_sum, tape.backward(loss)?);
            }
            let scale = 1.0 / batch.len() as f64;
            for (_, g) in grad_sum.iter_mut() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            epoch_loss += batch_loss;
            step += 1;
            adam_step(&mut weights, &grad_sum, &mut adam, step, lr, train_cfg)?;
        }
        let train_loss = epoch_loss / n_windows as f64;
        let val_loss = validation_loss(model_cfg, &weights, val)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
        });

        match stopper.update(val_loss) {
            StopDecision::Improved => {
                best_weights = weights.clone();
                best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    Ok(FitResult {
        weights: best_weights,
        history,
        best_epoch,
        best_val_loss: stopper.best(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{make_windows, Channel, FusedSeries};
    use crate::model::{init_weights, LagSet, LossMode, PosEncoding};
    use chrono::{DateTime, Utc};
    use rand::Rng;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            lag_set: LagSet::new(vec![1, 2]).unwrap(),
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            dropout_p: 0.0,
            n_covariates: 0,
            loss_mode: LossMode::StudentTNll,
            rope_base: 10000.0,
            pos_encoding: PosEncoding::Rotary,
        }
    }

    fn ar1_series(n: usize, seed: u64) -> FusedSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0f64];
        for _ in 1..n {
            let prev = *values.last().unwrap();
            values.push(0.85 * prev + 0.3 * rng.gen_range(-1.0..1.0));
        }
        FusedSeries {
            start: DateTime::<Utc>::UNIX_EPOCH,
            step_seconds: 60,
            channels: vec![Channel {
                name: "mean_g".into(),
                values,
                missing: vec![false; n],
                stats: None,
            }],
        }
    }

    #[test]
    fn budget_bound_runs_exactly_max_epochs() {
        let cfg = TrainConfig {
            max_epochs: 5,
            patience: 20,
            batch_size: 8,
            seed: 1,
            ..TrainConfig::default()
        };
        let model = tiny_model();
        let series = ar1_series(120, 3);
        let windows = make_windows(&series, 8, 2, 4, 2);
        let data = Windowed::new(&series, &windows);
        let init = init_weights(&model, 1);
        let result = fit(&cfg, &model, init, &[data], &[data]).unwrap();
        assert_eq!(result.history.len(), 5);
    }

    #[test]
    fn training_reduces_validation_loss_on_ar1() {
        let cfg = TrainConfig {
            max_epochs: 15,
            patience: 20,
            batch_size: 8,
            seed: 42,
            lr0: 0.005,
            ..TrainConfig::default()
        };
        let model = tiny_model();
        let train_series = ar1_series(300, 11);
        let val_series = ar1_series(120, 12);
        let wt = make_windows(&train_series, 12, 1, 4, 2);
        let wv = make_windows(&val_series, 12, 1, 6, 2);
        let init = init_weights(&model, 42);
        let val_part = [Windowed::new(&val_series, &wv)];
        let initial = validation_loss(&model, &init, &val_part).unwrap();
        let result = fit(
            &cfg,
            &model,
            init,
            &[Windowed::new(&train_series, &wt)],
            &val_part,
        )
        .unwrap();
        assert!(
            result.best_val_loss < initial,
            "best {} vs initial {initial}",
            result.best_val_loss
        );
    }

    #[test]
    fn best_checkpoint_contract() {
        let cfg = TrainConfig {
            max_epochs: 10,
            patience: 3,
            batch_size: 4,
            seed: 7,
            ..TrainConfig::default()
        };
        let model = tiny_model();
        let series = ar1_series(150, 5);
        let windows = make_windows(&series, 8, 1, 5, 2);
        let data = [Windowed::new(&series, &windows)];
        let result = fit(&cfg, &model, init_weights(&model, 7), &data, &data).unwrap();
        let min_val = result
            .history
            .iter()
            .map(|h| h.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert!((result.best_val_loss - min_val).abs() < 1e-12);
        // returned weights reproduce the best recorded validation loss
        let replay = validation_loss(&model, &result.weights, &data).unwrap();
        assert!((replay - result.best_val_loss).abs() < 1e-12);
    }

    #[test]
    fn multi_part_training_pools_windows() {
        let cfg = TrainConfig {
            max_epochs: 2,
            batch_size: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        let model = tiny_model();
        let s1 = ar1_series(60, 1);
        let s2 = ar1_series(60, 2);
        let w1 = make_windows(&s1, 8, 1, 6, 2);
        let w2 = make_windows(&s2, 8, 1, 6, 2);
        let parts = [Windowed::new(&s1, &w1), Windowed::new(&s2, &w2)];
        let result = fit(&cfg, &model, init_weights(&model, 3), &parts, &parts).unwrap();
        assert_eq!(result.history.len(), 2);
    }

    #[test]
    fn empty_split_rejected() {
        let cfg = TrainConfig::default();
        let model = tiny_model();
        let series = ar1_series(10, 1);
        let windows = make_windows(&series, 50, 10, 1, 2); // too long -> empty
        let data = [Windowed::new(&series, &windows)];
        assert!(matches!(
            fit(&cfg, &model, init_weights(&model, 0), &data, &data),
            Err(TrainError::EmptySplit("train"))
        ));
    }

    #[test]
    fn fit_is_deterministic() {
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let model = ModelConfig {
            dropout_p: 0.1,
            ..tiny_model()
        };
        let series = ar1_series(100, 2);
        let windows = make_windows(&series, 8, 1, 6, 2);
        let data = [Windowed::new(&series, &windows)];
        let run = || fit(&cfg, &model, init_weights(&model, 9), &data, &data).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.weights, b.weights);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.val_loss.to_bits(), y.val_loss.to_bits());
        }
    }
}
