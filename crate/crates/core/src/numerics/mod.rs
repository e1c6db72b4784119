//! Minimal dense-tensor substrate with reverse-mode gradient accumulation:
//! matrix products, elementwise nonlinearities, softmax, layer normalization,
//! dropout, and the fused Student-t likelihood head — everything the decoder
//! stack needs, in 64-bit floats throughout so gradient checks are sharp.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{constrain, student_t_nll_scalar, GradMap, ParamSet, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::kernel;

use thiserror::Error;

/// Errors raised by tensor and tape operations.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("loss node must be scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadShape { shape: Vec<usize>, len: usize },
}

/// Numerically stable softplus, ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of softplus.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
