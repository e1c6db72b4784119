//! Rotary position encoding applied to query/key tensors outside the tape
//! (the tape has its own recording variant sharing the same kernel).

use crate::numerics::{kernel, Tensor};

use super::ModelError;

/// Rotates consecutive head-dimension pairs of `q` and `k` by pos * theta_i,
/// theta_i = base^(-2i/d_head). Returns the rotated pair.
pub fn apply_rope(
    q: &Tensor,
    k: &Tensor,
    positions: &[usize],
    base: f64,
) -> Result<(Tensor, Tensor), ModelError> {
    let rotate = |t: &Tensor| -> Result<Tensor, ModelError> {
        let (m, n) = (t.rows(), t.cols());
        if n % 2 != 0 {
            return Err(ModelError::OddHeadDim(n));
        }
        if positions.len() != m {
            return Err(ModelError::BadConfig(format!(
                "{} positions for {m} rows",
                positions.len()
            )));
        }
        let mut data = t.data().to_vec();
        kernel::rope_rotate(&mut data, m, n, positions, base, false);
        Ok(Tensor::matrix(m, n, data).expect("rope shape"))
    };
    Ok((rotate(q)?, rotate(k)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_is_identity() {
        let q = Tensor::matrix(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::matrix(1, 4, vec![-1.0, 0.5, 0.0, 2.0]).unwrap();
        let (q2, k2) = apply_rope(&q, &k, &[0], 10000.0).unwrap();
        assert_eq!(q2, q);
        assert_eq!(k2, k);
    }

    #[test]
    fn two_dim_rotation_closed_form() {
        // d_head = 2 so theta_0 = base^0 = 1; position 1 rotates (1,0) by 1 radian
        let q = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let k = q.clone();
        let (q2, _) = apply_rope(&q, &k, &[1], 10000.0).unwrap();
        assert!((q2.data()[0] - 1.0f64.cos()).abs() < 1e-12);
        assert!((q2.data()[1] - 1.0f64.sin()).abs() < 1e-12);
        assert!((q2.data()[0] - 0.540302).abs() < 1e-6);
        assert!((q2.data()[1] - 0.841471).abs() < 1e-6);
    }

    #[test]
    fn rotation_preserves_pair_norms() {
        let vals: Vec<f64> = (0..32).map(|i| (i as f64 * 1.37).sin() * 3.0).collect();
        let q = Tensor::matrix(4, 8, vals).unwrap();
        let k = q.clone();
        let (q2, _) = apply_rope(&q, &k, &[0, 5, 11, 100], 10000.0).unwrap();
        for r in 0..4 {
            for pair in 0..4 {
                let n1 = q.get2(r, 2 * pair).hypot(q.get2(r, 2 * pair + 1));
                let n2 = q2.get2(r, 2 * pair).hypot(q2.get2(r, 2 * pair + 1));
                assert!((n1 - n2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dot_product_depends_only_on_position_offset() {
        // identical content vectors at positions (p, p+d) must give the same
        // q.k dot product for every p
        let content = vec![0.3, -1.2, 0.8, 2.0, -0.5, 0.1];
        let dot_at = |p: usize, delta: usize| -> f64 {
            let q = Tensor::matrix(1, 6, content.clone()).unwrap();
            let k = q.clone();
            let (q2, _) = apply_rope(&q, &k, &[p], 10000.0).unwrap();
            let (k2, _) = apply_rope(&k, &q, &[p + delta], 10000.0).unwrap();
            q2.data().iter().zip(k2.data()).map(|(a, b)| a * b).sum()
        };
        for delta in [0usize, 1, 3, 7] {
            let d0 = dot_at(0, delta);
            for p in [1usize, 4, 19, 50] {
                assert!(
                    (dot_at(p, delta) - d0).abs() < 1e-9,
                    "offset {delta} at base {p}"
                );
            }
        }
    }

    #[test]
    fn odd_head_dim_rejected() {
        let q = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let k = q.clone();
        assert!(matches!(
            apply_rope(&q, &k, &[0], 10000.0),
            Err(ModelError::OddHeadDim(3))
        ));
    }
}
