//! Lagged-feature decoder forecaster: tokens built from target lags plus
//! covariates, an affine projection into model width, M pre-norm decoder
//! layers (causal multi-head self-attention with rotary position encoding,
//! GELU feed-forward, residuals, dropout), and a Student-t distribution head.

mod forecast;
pub mod rope;
mod student_t;
mod weights;

pub use forecast::{forecast_autoregressive, CovariatePolicy, ForecastDistribution};
pub use student_t::{nll_loss, sample_student_t, StudentTParams};
pub use weights::{init_weights, load_weights, read_weights, save_weights, write_weights};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numerics::{constrain, NumericsError, ParamSet, Tape, Tensor, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("insufficient history: have {have} steps, need at least {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("head dimension {0} is odd; rotary encoding needs pairs")]
    OddHeadDim(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("weights file: {0}")]
    WeightsFormat(String),
    #[error("weights i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Strictly increasing positive lag offsets used to build token features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LagSet {
    lags: Vec<usize>,
}

impl LagSet {
    pub fn new(lags: Vec<usize>) -> Result<Self, ModelError> {
        if lags.is_empty() {
            return Err(ModelError::BadConfig("empty lag set".into()));
        }
        if lags[0] < 1 || lags.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::BadConfig(format!(
                "lags must be strictly increasing and >= 1, got {lags:?}"
            )));
        }
        Ok(Self { lags })
    }

    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    /// Largest lag; the windowing margin required ahead of every token.
    pub fn max_lag(&self) -> usize {
        *self.lags.last().expect("non-empty")
    }
}

impl TryFrom<Vec<usize>> for LagSet {
    type Error = String;
    fn try_from(v: Vec<usize>) -> Result<Self, String> {
        LagSet::new(v).map_err(|e| e.to_string())
    }
}

impl From<LagSet> for Vec<usize> {
    fn from(l: LagSet) -> Vec<usize> {
        l.lags
    }
}

impl Default for LagSet {
    /// Short-term plus daily-scale offsets at minute cadence.
    fn default() -> Self {
        Self {
            lags: vec![1, 2, 3, 4, 5, 6, 7, 8, 12, 24, 48],
        }
    }
}

/// Training objective of the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    StudentTNll,
    MseOnMean,
}

/// Position-information mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosEncoding {
    Rotary,
    Sinusoidal,
}

/// Hyperparameters of the forecaster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub lag_set: LagSet,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    /// Decoder layer count.
    #[serde(rename = "m", default = "default_layers")]
    pub n_layers: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    pub n_covariates: usize,
    #[serde(default = "default_loss_mode")]
    pub loss_mode: LossMode,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_pos_encoding")]
    pub pos_encoding: PosEncoding,
}

fn default_d_model() -> usize {
    64
}
fn default_n_heads() -> usize {
    4
}
fn default_layers() -> usize {
    2
}
fn default_dropout() -> f64 {
    0.1
}
fn default_loss_mode() -> LossMode {
    LossMode::StudentTNll
}
fn default_rope_base() -> f64 {
    10000.0
}
fn default_pos_encoding() -> PosEncoding {
    PosEncoding::Rotary
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model / self.n_heads % 2 != 0 {
            return Err(ModelError::OddHeadDim(self.d_model / self.n_heads));
        }
        if self.n_layers == 0 {
            return Err(ModelError::BadConfig("need at least one layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::BadConfig(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Width of one token: lag features plus covariates.
    pub fn token_width(&self) -> usize {
        self.lag_set.len() + self.n_covariates
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Lagged values of `values` behind position `pos` (0-based index of the
/// current step), in lag-set order. `pos == values.len()` is allowed: the
/// token for the first unobserved step reads only values behind it.
pub fn lag_vector(values: &[f64], lags: &LagSet, pos: usize) -> Result<Vec<f64>, ModelError> {
    if pos < lags.max_lag() {
        return Err(ModelError::InsufficientHistory {
            have: pos,
            need: lags.max_lag(),
        });
    }
    if pos > values.len() {
        return Err(ModelError::InsufficientHistory {
            have: values.len(),
            need: pos,
        });
    }
    Ok(lags.lags().iter().map(|&l| values[pos - l]).collect())
}

/// Builds the (S, C + n_covariates) token matrix for positions
/// `first..first+count` of the target series: each row is the lag vector of
/// the target followed by that step's covariate values.
pub fn build_tokens(
    target: &[f64],
    covariates: &[Vec<f64>],
    lags: &LagSet,
    first: usize,
    count: usize,
) -> Result<Tensor, ModelError> {
    let width = lags.len() + covariates.len();
    let mut data = Vec::with_capacity(count * width);
    for pos in first..first + count {
        data.extend(lag_vector(target, lags, pos)?);
        for cov in covariates {
            data.push(cov[pos]);
        }
    }
    Ok(Tensor::matrix(count, width, data).expect("token shape"))
}

/// Records the full decoder forward pass on `tape` and returns the (S, 3) raw
/// head output. `vars` must contain every parameter of [`init_weights`].
pub fn forward_raw(
    cfg: &ModelConfig,
    vars: &BTreeMap<String, Var>,
    tokens: Var,
    tape: &mut Tape,
) -> Result<Var, ModelError> {
    cfg.validate()?;
    let seq_len = tape.value(tokens).rows();
    let positions: Vec<usize> = (0..seq_len).collect();
    let dh = cfg.head_dim();
    let var = |name: &str| -> Result<Var, ModelError> {
        vars.get(name)
            .copied()
            .ok_or_else(|| ModelError::WeightsFormat(format!("missing parameter {name}")))
    };

    let mut h = tape.matmul(tokens, var("proj.w")?)?;
    h = tape.add_row(h, var("proj.b")?)?;
    if cfg.pos_encoding == PosEncoding::Sinusoidal {
        let pe = tape.input(sinusoidal_encoding(seq_len, cfg.d_model, cfg.rope_base));
        h = tape.add(h, pe)?;
    }

    for layer in 0..cfg.n_layers {
        let p = |suffix: &str| format!("layer{layer}.{suffix}");

        let mut a = tape.layer_norm(h)?;
        a = tape.mul_row(a, var(&p("ln1.g"))?)?;
        a = tape.add_row(a, var(&p("ln1.b"))?)?;
        let mut q = tape.matmul(a, var(&p("attn.wq"))?)?;
        q = tape.add_row(q, var(&p("attn.bq"))?)?;
        let mut k = tape.matmul(a, var(&p("attn.wk"))?)?;
        k = tape.add_row(k, var(&p("attn.bk"))?)?;
        let mut v = tape.matmul(a, var(&p("attn.wv"))?)?;
        v = tape.add_row(v, var(&p("attn.bv"))?)?;

        let mut heads = Vec::with_capacity(cfg.n_heads);
        for j in 0..cfg.n_heads {
            let mut qj = tape.slice_cols(q, j * dh, dh)?;
            let mut kj = tape.slice_cols(k, j * dh, dh)?;
            let vj = tape.slice_cols(v, j * dh, dh)?;
            if cfg.pos_encoding == PosEncoding::Rotary {
                qj = tape.rope(qj, &positions, cfg.rope_base)?;
                kj = tape.rope(kj, &positions, cfg.rope_base)?;
            }
            let scores = tape.matmul_nt(qj, kj)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = tape.causal_softmax(scores)?;
            heads.push(tape.matmul(attn, vj)?);
        }
        let ctx = tape.concat_cols(&heads)?;
        let mut o = tape.matmul(ctx, var(&p("attn.wo"))?)?;
        o = tape.add_row(o, var(&p("attn.bo"))?)?;
        o = tape.dropout(o, cfg.dropout_p);
        h = tape.add(h, o)?;

        let mut a2 = tape.layer_norm(h)?;
        a2 = tape.mul_row(a2, var(&p("ln2.g"))?)?;
        a2 = tape.add_row(a2, var(&p("ln2.b"))?)?;
        let mut f = tape.matmul(a2, var(&p("ff.w1"))?)?;
        f = tape.add_row(f, var(&p("ff.b1"))?)?;
        f = tape.gelu(f);
        f = tape.matmul(f, var(&p("ff.w2"))?)?;
        f = tape.add_row(f, var(&p("ff.b2"))?)?;
        f = tape.dropout(f, cfg.dropout_p);
        h = tape.add(h, f)?;
    }

    let raw = tape.matmul(h, var("head.w")?)?;
    Ok(tape.add_row(raw, var("head.b")?)?)
}

/// Evaluation-mode forward pass: Student-t parameters for every position.
pub fn forward_step(
    cfg: &ModelConfig,
    weights: &ParamSet,
    tokens: &Tensor,
) -> Result<Vec<StudentTParams>, ModelError> {
    let mut tape = Tape::new(0, false);
    let vars = tape.register(weights);
    let t = tape.input(tokens.clone());
    let raw = forward_raw(cfg, &vars, t, &mut tape)?;
    Ok(raw_to_params(tape.value(raw)))
}

/// Maps each (raw_nu, raw_mu, raw_sigma) row through the head constraints.
pub fn raw_to_params(raw: &Tensor) -> Vec<StudentTParams> {
    let s = raw.rows();
    (0..s)
        .map(|i| {
            let (nu, mu, sigma) = constrain(raw.get2(i, 0), raw.get2(i, 1), raw.get2(i, 2));
            StudentTParams { nu, mu, sigma }
        })
        .collect()
}

/// Builds the training graph for one window: forward pass plus the configured
/// loss against next-step targets. Returns the tape and the scalar loss node.
pub fn loss_graph(
    cfg: &ModelConfig,
    weights: &ParamSet,
    tokens: &Tensor,
    targets: &[f64],
    dropout_seed: u64,
    train: bool,
) -> Result<(Tape, Var), ModelError> {
    let mut tape = Tape::new(dropout_seed, train);
    let vars = tape.register(weights);
    let t = tape.input(tokens.clone());
    let raw = forward_raw(cfg, &vars, t, &mut tape)?;
    let loss = match cfg.loss_mode {
        LossMode::StudentTNll => tape.student_t_nll(raw, targets)?,
        LossMode::MseOnMean => tape.mse_on_mean(raw, targets)?,
    };
    Ok((tape, loss))
}

/// Additive sinusoidal position table (used when `pos_encoding = sinusoidal`).
fn sinusoidal_encoding(seq_len: usize, d_model: usize, base: f64) -> Tensor {
    let mut data = vec![0.0; seq_len * d_model];
    for pos in 0..seq_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 * base.powf(-2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::matrix(seq_len, d_model, data).expect("pe shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            lag_set: LagSet::new(vec![1, 2, 3]).unwrap(),
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            dropout_p: 0.0,
            n_covariates: 2,
            loss_mode: LossMode::StudentTNll,
            rope_base: 10000.0,
            pos_encoding: PosEncoding::Rotary,
        }
    }

    #[test]
    fn lag_vector_indexing() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0];
        let lags = LagSet::new(vec![1, 2, 3]).unwrap();
        // current position = last element (index 4, i.e. 1-indexed t=5)
        assert_eq!(lag_vector(&values, &lags, 4).unwrap(), vec![4.0, 3.0, 2.0]);
    }

    #[test]
    fn lag_vector_minimal_case() {
        let values = [7.0, 9.0];
        let lags = LagSet::new(vec![1]).unwrap();
        assert_eq!(lag_vector(&values, &lags, 1).unwrap(), vec![7.0]);
    }

    #[test]
    fn lag_vector_boundary_guard() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0];
        let lags = LagSet::new(vec![1, 2, 3]).unwrap();
        // position with 1-indexed t = max lag is one short of valid
        assert!(matches!(
            lag_vector(&values, &lags, 2),
            Err(ModelError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn lag_set_must_increase() {
        assert!(LagSet::new(vec![1, 2, 2]).is_err());
        assert!(LagSet::new(vec![0, 1]).is_err());
        assert!(LagSet::new(vec![]).is_err());
    }

    #[test]
    fn zero_weights_emit_reference_params() {
        // all-zero parameters force raw head output (0,0,0) at every position
        let cfg = toy_config();
        let mut weights = init_weights(&cfg, 0);
        for (_, t) in weights.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let target: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let covs = vec![vec![0.5; 8], vec![-0.5; 8]];
        let tokens = build_tokens(&target, &covs, &cfg.lag_set, 3, 5).unwrap();
        let params = forward_step(&cfg, &weights, &tokens).unwrap();
        for p in params {
            assert!((p.nu - (2.0 + std::f64::consts::LN_2)).abs() < 1e-12);
            assert_eq!(p.mu, 0.0);
            assert!((p.sigma - (std::f64::consts::LN_2 + 1e-6)).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_mask_blocks_future_influence() {
        let cfg = toy_config();
        let weights = init_weights(&cfg, 7);
        let target: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let covs = vec![vec![0.1; 16], vec![0.2; 16]];
        let tokens = build_tokens(&target, &covs, &cfg.lag_set, 3, 10).unwrap();
        let base = forward_step(&cfg, &weights, &tokens).unwrap();

        // perturb the token at position j; earlier positions must not move
        for j in [3usize, 6, 9] {
            let mut perturbed = tokens.clone();
            let w = perturbed.cols();
            for c in 0..w {
                let v = perturbed.get2(j, c) + 10.0;
                perturbed.set2(j, c, v);
            }
            let out = forward_step(&cfg, &weights, &perturbed).unwrap();
            for (i, (a, b)) in base.iter().zip(&out).enumerate().take(j) {
                assert!(
                    (a.mu - b.mu).abs() < 1e-12
                        && (a.sigma - b.sigma).abs() < 1e-12
                        && (a.nu - b.nu).abs() < 1e-12,
                    "position {i} changed under perturbation at {j}"
                );
            }
            let moved = (base[j].mu - out[j].mu).abs() > 1e-9;
            assert!(moved, "perturbation at {j} should move its own output");
        }
    }

    #[test]
    fn forward_is_deterministic_without_dropout() {
        let cfg = toy_config();
        let weights = init_weights(&cfg, 3);
        let target: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let covs = vec![vec![0.0; 12], vec![1.0; 12]];
        let tokens = build_tokens(&target, &covs, &cfg.lag_set, 3, 8).unwrap();
        let a = forward_step(&cfg, &weights, &tokens).unwrap();
        let b = forward_step(&cfg, &weights, &tokens).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mu.to_bits(), y.mu.to_bits());
            assert_eq!(x.sigma.to_bits(), y.sigma.to_bits());
            assert_eq!(x.nu.to_bits(), y.nu.to_bits());
        }
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = toy_config();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"m\":1"), "layer count serialized as m: {json}");
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.d_model, cfg.d_model);
        assert_eq!(back.lag_set, cfg.lag_set);
    }
}
