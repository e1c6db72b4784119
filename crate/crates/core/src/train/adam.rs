//! Bias-corrected Adam with L2 regularization folded into the gradient.

use std::collections::BTreeMap;

use crate::numerics::{GradMap, ParamSet, Tensor};

use super::{TrainConfig, TrainError};

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update at step `t` (1-based) with learning rate `lr`. The L2 term
/// enters as a gradient contribution, grad + weight_decay * param, before the
/// moment updates.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &GradMap,
    state: &mut AdamState,
    t: usize,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    assert!(t >= 1, "Adam step count is 1-based");
    let (b1, b2) = cfg.betas;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        if g.shape() != p.shape() {
            return Err(TrainError::Numerics(
                crate::numerics::NumericsError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!("{name}: grad {:?} vs param {:?}", g.shape(), p.shape()),
                },
            ));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        for i in 0..p.len() {
            let gi = g.data()[i] + cfg.weight_decay * p.data()[i];
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}
