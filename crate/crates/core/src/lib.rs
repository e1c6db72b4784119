//! Plant-monitoring toolkit: per-frame phenotype statistics from segmentation
//! masks, fusion of phenotype and environmental sensor streams onto a regular
//! time grid, and a lag-feature transformer forecaster with a Student-t head
//! for probabilistic prediction of the green-channel water-stress proxy.
//!
//! The crate is organized along the pipeline stages:
//!
//! - [`pheno`] — mask statistics, heatmap rendering, phenotype CSV
//! - [`fusion`] — stream alignment, spline imputation, feature engineering,
//!   normalization, windowing
//! - [`numerics`] — dense f64 tensors with a reverse-mode gradient tape
//! - [`model`] — lagged-feature decoder with rotary attention and Student-t
//!   distribution head, plus autoregressive sampling
//! - [`train`] — Adam/cosine-annealing training loop, CRPS and point metrics,
//!   and the zero-shot vs fine-tuning modality ablation harness
//! - [`synth`] — deterministic grow-tent simulator and pretraining corpus
//!
//! Data-parallel inner loops (per-frame stats, sample paths, ablation cells)
//! run on rayon when the default `parallel` feature is enabled and fall back
//! to sequential execution when it is disabled.

pub mod exec;
pub mod fusion;
pub mod model;
pub mod numerics;
pub mod pheno;
pub mod synth;
pub mod train;

mod timefmt;

pub use timefmt::{format_utc, parse_utc};
