//! Reverse-mode gradient tape over dense tensors.
//!
//! A [`Tape`] records operations as they execute; [`Tape::backward`] walks the
//! recording in reverse and accumulates gradients for every registered
//! parameter. Dropout masks are drawn from the tape's seeded generator at
//! record time, so forward values, masks, and gradients are all deterministic
//! functions of (seed, inputs, construction order).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::{digamma, ln_gamma};

use super::{sigmoid, softplus, NumericsError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Named parameter tensors. Iteration order is the sorted name order, which
/// keeps optimizer updates and serialization deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn n_entries(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }
}

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a (m,k) times b (n,k) transposed -> (m,n)
    MatMulNt(Var, Var),
    Add(Var, Var),
    /// (m,n) plus a length-n row broadcast over rows
    AddRow(Var, Var),
    /// (m,n) times a length-n row broadcast over rows
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    CausalSoftmax(Var),
    LayerNorm(Var),
    Dropout(Var, Vec<f64>),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    Rope {
        input: Var,
        base: f64,
        positions: Vec<usize>,
    },
    MeanAll(Var),
    SumAll(Var),
    /// Raw head output (S,3) + per-position targets -> mean Student-t NLL.
    StudentTNll(Var, Vec<f64>),
    /// Raw head output (S,3) + targets -> mean squared error of the location column.
    MseOnMean(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
}

/// Recording tape. One tape per forward pass; rebuild for each new input.
pub struct Tape {
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    train: bool,
}

const LN_EPS: f64 = 1e-5;
const SIGMA_FLOOR: f64 = 1e-6;

impl Tape {
    /// `seed` drives dropout masks; `train` enables them.
    pub fn new(seed: u64, train: bool) -> Self {
        Self {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            train,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-trainable input value.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records a named trainable parameter.
    pub fn param(&mut self, name: impl Into<String>, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].param = Some(name.into());
        v
    }

    /// Registers every tensor of `params` and returns name -> handle.
    pub fn register(&mut self, params: &ParamSet) -> BTreeMap<String, Var> {
        let mut out = BTreeMap::new();
        for (name, t) in params.iter() {
            let v = self.param(name.clone(), t.clone());
            out.insert(name.clone(), v);
        }
        out
    }

    fn shape_err(op: &'static str, detail: String) -> NumericsError {
        NumericsError::ShapeMismatch { op, detail }
    }

    fn check2(&self, op: &'static str, v: Var) -> Result<(usize, usize), NumericsError> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(Self::shape_err(op, format!("expected matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    /// (m,k) x (k,n) -> (m,n)
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.check2("matmul", a)?;
        let (k2, n) = self.check2("matmul", b)?;
        if k != k2 {
            return Err(Self::shape_err(
                "matmul",
                format!("inner dims {k} vs {k2}"),
            ));
        }
        let out = kernel::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(
            Tensor::matrix(m, n, out).expect("matmul shape"),
            Op::MatMul(a, b),
        ))
    }

    /// (m,k) x (n,k)^T -> (m,n)
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.check2("matmul_nt", a)?;
        let (n, k2) = self.check2("matmul_nt", b)?;
        if k != k2 {
            return Err(Self::shape_err(
                "matmul_nt",
                format!("inner dims {k} vs {k2}"),
            ));
        }
        let out = kernel::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(
            Tensor::matrix(m, n, out).expect("matmul_nt shape"),
            Op::MatMulNt(a, b),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Self::shape_err(
                "add",
                format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data).expect("add shape");
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// Adds a length-n row vector to every row of an (m,n) matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.check2("add_row", a)?;
        if self.value(row).shape() != [n] {
            return Err(Self::shape_err(
                "add_row",
                format!("row shape {:?}, expected [{n}]", self.value(row).shape()),
            ));
        }
        let mut data = self.value(a).data().to_vec();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += r[j];
            }
        }
        Ok(self.push(
            Tensor::matrix(m, n, data).expect("add_row shape"),
            Op::AddRow(a, row),
        ))
    }

    /// Multiplies every row of an (m,n) matrix by a length-n row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.check2("mul_row", a)?;
        if self.value(row).shape() != [n] {
            return Err(Self::shape_err(
                "mul_row",
                format!("row shape {:?}, expected [{n}]", self.value(row).shape()),
            ));
        }
        let mut data = self.value(a).data().to_vec();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] *= r[j];
            }
        }
        Ok(self.push(
            Tensor::matrix(m, n, data).expect("mul_row shape"),
            Op::MulRow(a, row),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Self::shape_err(
                "mul",
                format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data).expect("mul shape");
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data).expect("scale shape");
        self.push(t, Op::Scale(a, c))
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| kernel::gelu(x)).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data).expect("gelu shape");
        self.push(t, Op::Gelu(a))
    }

    /// Row-wise softmax over the last dimension, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.check2("softmax", a)?;
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            kernel::softmax_row(&mut data[i * n..(i + 1) * n], n);
        }
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Ok(self.push(
            Tensor::matrix(m, n, data).expect("softmax shape"),
            Op::Softmax(a),
        ))
    }

    /// Row-wise softmax over columns j <= i of a square score matrix: entries
    /// above the diagonal get zero weight.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.check2("causal_softmax", a)?;
        if m != n {
            return Err(Self::shape_err(
                "causal_softmax",
                format!("expected square scores, got {m}x{n}"),
            ));
        }
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            kernel::softmax_row(row, i + 1);
            for v in row.iter_mut().skip(i + 1) {
                *v = 0.0;
            }
        }
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Ok(self.push(
            Tensor::matrix(m, n, data).expect("causal_softmax shape"),
            Op::CausalSoftmax(a),
        ))
    }

    /// Row-wise layer normalization (no affine), epsilon 1e-5.
    pub fn layer_norm(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.check2("layer_norm", a)?;
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            kernel::layer_norm_row(&mut data[i * n..(i + 1) * n]);
        }
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Ok(self.push(
            Tensor::matrix(m, n, data).expect("layer_norm shape"),
            Op::LayerNorm(a),
        ))
    }

    /// Inverted dropout: keep with probability 1-p and scale kept entries by
    /// 1/(1-p). Identity when the tape is in eval mode or p == 0.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data).expect("dropout shape");
        self.push(t, Op::Dropout(a, mask))
    }

    /// Columns [start, start+len) of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.check2("slice_cols", a)?;
        if start + len > n {
            return Err(Self::shape_err(
                "slice_cols",
                format!("cols [{start}, {}) out of {n}", start + len),
            ));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        Ok(self.push(
            Tensor::matrix(m, len, data).expect("slice shape"),
            Op::SliceCols(a, start, len),
        ))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(Self::shape_err("concat_cols", "no parts".into()));
        }
        let (m, _) = self.check2("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mp, np) = self.check2("concat_cols", p)?;
            if mp != m {
                return Err(Self::shape_err(
                    "concat_cols",
                    format!("row counts {m} vs {mp}"),
                ));
            }
            widths.push(np);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(
            Tensor::matrix(m, total, data).expect("concat shape"),
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Rotary position encoding over consecutive column pairs of an (S, d)
    /// matrix; `positions[i]` is the rotation index for row i.
    pub fn rope(&mut self, a: Var, positions: &[usize], base: f64) -> Result<Var, NumericsError> {
        let (m, n) = self.check2("rope", a)?;
        if n % 2 != 0 {
            return Err(Self::shape_err("rope", format!("odd head dim {n}")));
        }
        if positions.len() != m {
            return Err(Self::shape_err(
                "rope",
                format!("{} positions for {m} rows", positions.len()),
            ));
        }
        let mut data = self.value(a).data().to_vec();
        kernel::rope_rotate(&mut data, m, n, positions, base, false);
        Ok(self.push(
            Tensor::matrix(m, n, data).expect("rope shape"),
            Op::Rope {
                input: a,
                base,
                positions: positions.to_vec(),
            },
        ))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mean = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(mean), Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Mean Student-t negative log likelihood over positions. `raw` is (S,3):
    /// columns are the unconstrained (nu, mu, sigma) head outputs; constraints
    /// are nu = 2 + softplus(raw0), mu = raw1, sigma = softplus(raw2) + 1e-6.
    pub fn student_t_nll(&mut self, raw: Var, targets: &[f64]) -> Result<Var, NumericsError> {
        let (s, c) = self.check2("student_t_nll", raw)?;
        if c != 3 || s != targets.len() {
            return Err(Self::shape_err(
                "student_t_nll",
                format!("raw {s}x{c} with {} targets", targets.len()),
            ));
        }
        let data = self.value(raw).data();
        let mut total = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let (nu, mu, sigma) = constrain(data[i * 3], data[i * 3 + 1], data[i * 3 + 2]);
            total += student_t_nll_scalar(y, nu, mu, sigma);
        }
        let loss = total / s as f64;
        debug_assert!(loss.is_finite());
        Ok(self.push(
            Tensor::scalar(loss),
            Op::StudentTNll(raw, targets.to_vec()),
        ))
    }

    /// Mean squared error of the head's location column against targets.
    pub fn mse_on_mean(&mut self, raw: Var, targets: &[f64]) -> Result<Var, NumericsError> {
        let (s, c) = self.check2("mse_on_mean", raw)?;
        if c != 3 || s != targets.len() {
            return Err(Self::shape_err(
                "mse_on_mean",
                format!("raw {s}x{c} with {} targets", targets.len()),
            ));
        }
        let data = self.value(raw).data();
        let mut total = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let d = data[i * 3 + 1] - y;
            total += d * d;
        }
        Ok(self.push(
            Tensor::scalar(total / s as f64),
            Op::MseOnMean(raw, targets.to_vec()),
        ))
    }

    /// Reverse pass from a scalar loss; returns gradients for every registered
    /// parameter (zero tensors for parameters the loss does not reach).
    pub fn backward(&self, loss: Var) -> Result<GradMap, NumericsError> {
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::NotScalarLoss(
                self.value(loss).shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.accumulate_parents(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out = GradMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }

    fn accumulate_parents(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_into = |grads: &mut [Option<Tensor>], v: Var, contrib: Vec<f64>| {
            let shape = self.value(v).shape().to_vec();
            let entry = grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape));
            for (dst, src) in entry.data_mut().iter_mut().zip(&contrib) {
                *dst += src;
            }
        };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let da = kernel::matmul_nt(g.data(), self.value(*b).data(), m, n, k);
                let db = kernel::matmul_tn(self.value(*a).data(), g.data(), m, k, n);
                add_into(grads, *a, da);
                add_into(grads, *b, db);
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).rows();
                let da = kernel::matmul(g.data(), self.value(*b).data(), m, n, k);
                let db = kernel::matmul_tn(g.data(), self.value(*a).data(), m, n, k);
                add_into(grads, *a, da);
                add_into(grads, *b, db);
            }
            Op::Add(a, b) => {
                add_into(grads, *a, g.data().to_vec());
                add_into(grads, *b, g.data().to_vec());
            }
            Op::AddRow(a, row) => {
                add_into(grads, *a, g.data().to_vec());
                let n = self.value(*row).len();
                let m = g.len() / n;
                let mut dr = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        dr[j] += g.data()[i * n + j];
                    }
                }
                add_into(grads, *row, dr);
            }
            Op::MulRow(a, row) => {
                let n = self.value(*row).len();
                let m = g.len() / n;
                let r = self.value(*row).data();
                let av = self.value(*a).data();
                let mut da = vec![0.0; m * n];
                let mut dr = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g.data()[i * n + j];
                        da[i * n + j] = gij * r[j];
                        dr[j] += gij * av[i * n + j];
                    }
                }
                add_into(grads, *a, da);
                add_into(grads, *row, dr);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(x, y)| x * y)
                    .collect();
                let db: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(x, y)| x * y)
                    .collect();
                add_into(grads, *a, da);
                add_into(grads, *b, db);
            }
            Op::Scale(a, c) => {
                add_into(grads, *a, g.data().iter().map(|x| x * c).collect());
            }
            Op::Gelu(a) => {
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(gy, &x)| gy * kernel::gelu_grad(x))
                    .collect();
                add_into(grads, *a, da);
            }
            Op::Softmax(a) | Op::CausalSoftmax(a) => {
                let y = self.nodes[idx].value.data();
                let n = self.nodes[idx].value.cols();
                let m = self.nodes[idx].value.rows();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                    for j in 0..n {
                        da[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                add_into(grads, *a, da);
            }
            Op::LayerNorm(a) => {
                let x = self.value(*a).data();
                let n = self.value(*a).cols();
                let m = self.value(*a).rows();
                let y = self.nodes[idx].value.data();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let xr = &x[i * n..(i + 1) * n];
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let mean = xr.iter().sum::<f64>() / n as f64;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let inv_std = 1.0 / (var + LN_EPS).sqrt();
                    let g_mean = gr.iter().sum::<f64>() / n as f64;
                    let gy_mean = gr.iter().zip(yr).map(|(gv, yv)| gv * yv).sum::<f64>() / n as f64;
                    for j in 0..n {
                        da[i * n + j] = inv_std * (gr[j] - g_mean - yr[j] * gy_mean);
                    }
                }
                add_into(grads, *a, da);
            }
            Op::Dropout(a, mask) => {
                let da: Vec<f64> = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                add_into(grads, *a, da);
            }
            Op::SliceCols(a, start, len) => {
                let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..*len {
                        da[i * n + start + j] = g.data()[i * len + j];
                    }
                }
                add_into(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let m = self.nodes[idx].value.rows();
                let total = self.nodes[idx].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut dp = vec![0.0; m * w];
                    for i in 0..m {
                        dp[i * w..(i + 1) * w].copy_from_slice(
                            &g.data()[i * total + offset..i * total + offset + w],
                        );
                    }
                    add_into(grads, p, dp);
                    offset += w;
                }
            }
            Op::Rope {
                input,
                base,
                positions,
            } => {
                let (m, n) = (self.value(*input).rows(), self.value(*input).cols());
                let mut da = g.data().to_vec();
                kernel::rope_rotate(&mut da, m, n, positions, *base, true);
                add_into(grads, *input, da);
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len() as f64;
                let gv = g.item() / n;
                add_into(grads, *a, vec![gv; self.value(*a).len()]);
            }
            Op::SumAll(a) => {
                add_into(grads, *a, vec![g.item(); self.value(*a).len()]);
            }
            Op::StudentTNll(raw, targets) => {
                let data = self.value(*raw).data();
                let s = targets.len();
                let scale = g.item() / s as f64;
                let mut da = vec![0.0; s * 3];
                for (i, &y) in targets.iter().enumerate() {
                    let (ra, rb, rc) = (data[i * 3], data[i * 3 + 1], data[i * 3 + 2]);
                    let (nu, mu, sigma) = constrain(ra, rb, rc);
                    let z = (y - mu) / sigma;
                    let z2 = z * z;
                    let denom = nu + z2;
                    let d_mu = -(nu + 1.0) * z / (sigma * denom);
                    let d_sigma = (1.0 - (nu + 1.0) * z2 / denom) / sigma;
                    let d_nu = -0.5 * digamma((nu + 1.0) / 2.0) + 0.5 * digamma(nu / 2.0)
                        + 0.5 / nu
                        + 0.5 * (z2 / nu).ln_1p()
                        - (nu + 1.0) * z2 / (2.0 * nu * denom);
                    da[i * 3] = scale * d_nu * sigmoid(ra);
                    da[i * 3 + 1] = scale * d_mu;
                    da[i * 3 + 2] = scale * d_sigma * sigmoid(rc);
                }
                add_into(grads, *raw, da);
            }
            Op::MseOnMean(raw, targets) => {
                let data = self.value(*raw).data();
                let s = targets.len();
                let scale = g.item() / s as f64;
                let mut da = vec![0.0; s * 3];
                for (i, &y) in targets.iter().enumerate() {
                    da[i * 3 + 1] = scale * 2.0 * (data[i * 3 + 1] - y);
                }
                add_into(grads, *raw, da);
            }
        }
    }
}

/// Maps raw head outputs to constrained (nu, mu, sigma):
/// nu > 2 for finite variance, sigma > 0 with a 1e-6 floor.
pub fn constrain(raw_nu: f64, raw_mu: f64, raw_sigma: f64) -> (f64, f64, f64) {
    (
        2.0 + softplus(raw_nu),
        raw_mu,
        softplus(raw_sigma) + SIGMA_FLOOR,
    )
}

/// Negative log density of the location-scale Student-t at `y`.
pub fn student_t_nll_scalar(y: f64, nu: f64, mu: f64, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0, "sigma must be positive");
    let z = (y - mu) / sigma;
    -ln_gamma((nu + 1.0) / 2.0) + ln_gamma(nu / 2.0)
        + 0.5 * (nu * std::f64::consts::PI).ln()
        + sigma.ln()
        + 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
}

pub(crate) mod kernel {
    //! Shared numeric kernels for forward and backward passes.

    pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        out
    }

    /// a (m,k) x b (n,k)^T -> (m,n)
    pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// a (m,k)^T x c (m,n) -> (k,n)
    pub fn matmul_tn(a: &[f64], c: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; k * n];
        for mm in 0..m {
            let arow = &a[mm * k..(mm + 1) * k];
            let crow = &c[mm * n..(mm + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                let orow = &mut out[kk * n..(kk + 1) * n];
                for (o, &cv) in orow.iter_mut().zip(crow) {
                    *o += av * cv;
                }
            }
        }
        out
    }

    /// In-place max-subtracted softmax over the first `active` entries of a
    /// row; the remainder is left untouched by the exponentiation loop.
    pub fn softmax_row(row: &mut [f64], active: usize) {
        let max = row[..active]
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row[..active].iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row[..active].iter_mut() {
            *v /= sum;
        }
    }

    /// In-place row layer normalization with epsilon 1e-5, no affine.
    pub fn layer_norm_row(row: &mut [f64]) {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + super::LN_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv_std;
        }
    }

    pub fn gelu(x: f64) -> f64 {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        let u = C * (x + 0.044715 * x * x * x);
        0.5 * x * (1.0 + u.tanh())
    }

    pub fn gelu_grad(x: f64) -> f64 {
        const C: f64 = 0.797_884_560_802_865_4;
        let u = C * (x + 0.044715 * x * x * x);
        let t = u.tanh();
        let sech2 = 1.0 - t * t;
        0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
    }

    /// Rotates consecutive column pairs of an (m,n) matrix by pos * theta_i
    /// with theta_i = base^(-2i/n); `inverse` applies the transpose rotation.
    pub fn rope_rotate(
        data: &mut [f64],
        m: usize,
        n: usize,
        positions: &[usize],
        base: f64,
        inverse: bool,
    ) {
        for i in 0..m {
            let pos = positions[i] as f64;
            let row = &mut data[i * n..(i + 1) * n];
            for pair in 0..n / 2 {
                let theta = pos * base.powf(-2.0 * pair as f64 / n as f64);
                let (sin, cos) = theta.sin_cos();
                let sin = if inverse { -sin } else { sin };
                let x0 = row[2 * pair];
                let x1 = row[2 * pair + 1];
                row[2 * pair] = x0 * cos - x1 * sin;
                row[2 * pair + 1] = x0 * sin + x1 * cos;
            }
        }
    }
}
