//! Optimization loop (Adam with bias correction, cosine annealing, L2,
//! early stopping), probabilistic and point forecast metrics, and the
//! zero-shot vs fine-tuning modality-ablation harness.

mod ablation;
mod adam;
mod fit;
mod metrics;
mod schedule;

pub use ablation::{
    evaluate_windows, pretrain_on_corpus, run_ablation, write_report_csv, write_report_json,
    AblationConfig, AblationRow, EvalSummary, Scenario,
};
pub use adam::{adam_step, AdamState};
pub use fit::{fit, validation_loss, EpochStats, FitResult, Windowed};
pub use metrics::{crps_point, crps_samples, point_metrics, MetricReport, PointMetrics};
pub use schedule::{cosine_lr, EarlyStopping, StopDecision};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusionError;
use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("length mismatch: {left} predictions vs {right} actuals")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 samples for the CRPS estimator, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr0() -> f64 {
    0.001
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_max_epochs() -> usize {
    50
}
fn default_patience() -> usize {
    20
}
fn default_batch_size() -> usize {
    16
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}
