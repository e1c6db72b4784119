//! Cubic spline interpolation with not-a-knot end conditions.
//!
//! Not-a-knot makes the first two and last two polynomial pieces identical,
//! so polynomials up to degree 3 are reproduced exactly — which is what makes
//! the imputation tests sharp. Degenerate knot counts fall back to the exact
//! interpolant of matching degree (2 points: line, 3 points: parabola).

use super::FusionError;

/// Fitted interpolant over strictly increasing knots.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots (empty for the n < 4 fallbacks).
    second: Vec<f64>,
}

impl CubicSpline {
    /// Fits a not-a-knot cubic spline through (xs, ys). Needs xs strictly
    /// increasing and at least 2 points.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Result<Self, FusionError> {
        let n = xs.len();
        if n != ys.len() || n < 2 {
            return Err(FusionError::TooFewPoints {
                channel: String::new(),
                have: n.min(ys.len()),
            });
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FusionError::Parse {
                line: 0,
                msg: "spline knots must be strictly increasing".into(),
            });
        }
        let second = if n < 4 {
            Vec::new()
        } else {
            solve_not_a_knot(xs, ys)
        };
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            second,
        })
    }

    /// Evaluates the interpolant. Outside the knot span the boundary piece is
    /// extended (callers doing imputation only query interior points).
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        match n {
            2 => {
                let t = (x - self.xs[0]) / (self.xs[1] - self.xs[0]);
                self.ys[0] + t * (self.ys[1] - self.ys[0])
            }
            3 => lagrange3(&self.xs, &self.ys, x),
            _ => {
                let i = self.interval(x);
                let h = self.xs[i + 1] - self.xs[i];
                let dx = x - self.xs[i];
                let (m0, m1) = (self.second[i], self.second[i + 1]);
                let b = (self.ys[i + 1] - self.ys[i]) / h - h * (2.0 * m0 + m1) / 6.0;
                self.ys[i] + b * dx + 0.5 * m0 * dx * dx + (m1 - m0) / (6.0 * h) * dx * dx * dx
            }
        }
    }

    fn interval(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(n - 2),
        }
    }
}

fn lagrange3(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let (x0, x1, x2) = (xs[0], xs[1], xs[2]);
    let l0 = (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2));
    let l1 = (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2));
    let l2 = (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1));
    ys[0] * l0 + ys[1] * l1 + ys[2] * l2
}

/// Solves for knot second derivatives with third-derivative continuity at the
/// second and next-to-last knots. The two not-a-knot rows are eliminated into
/// the first and last interior equations, leaving a tridiagonal system solved
/// by the Thomas algorithm (diagonally dominant for positive interval widths).
fn solve_not_a_knot(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let d = |i: usize| {
        6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1])
    };

    // unknowns u = (M_1 ... M_{n-2})
    let m = n - 2;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];

    diag[0] = (h[0] + h[1]) * (h[0] + 2.0 * h[1]) / h[1];
    upper[0] = (h[1] * h[1] - h[0] * h[0]) / h[1];
    rhs[0] = d(1);
    for j in 1..m - 1 {
        let i = j + 1; // knot index
        lower[j] = h[i - 1];
        diag[j] = 2.0 * (h[i - 1] + h[i]);
        upper[j] = h[i];
        rhs[j] = d(i);
    }
    let (hg, hh) = (h[n - 3], h[n - 2]);
    lower[m - 1] = (hg * hg - hh * hh) / hg;
    diag[m - 1] = (hh + hg) * (hh + 2.0 * hg) / hg;
    rhs[m - 1] = d(n - 2);

    // Thomas forward sweep
    for j in 1..m {
        let w = lower[j] / diag[j - 1];
        diag[j] -= w * upper[j - 1];
        rhs[j] -= w * rhs[j - 1];
    }
    let mut u = vec![0.0; m];
    u[m - 1] = rhs[m - 1] / diag[m - 1];
    for j in (0..m - 1).rev() {
        u[j] = (rhs[j] - upper[j] * u[j + 1]) / diag[j];
    }

    let mut second = vec![0.0; n];
    second[1..n - 1].copy_from_slice(&u);
    // recover the end values from the not-a-knot conditions
    second[0] = second[1] * (1.0 + h[0] / h[1]) - second[2] * h[0] / h[1];
    second[n - 1] =
        second[n - 2] * (1.0 + h[n - 2] / h[n - 3]) - second[n - 3] * h[n - 2] / h[n - 3];
    second
}
