//! Central-finite-difference validation of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::exec;

use super::{NumericsError, ParamSet, Tape, Var};

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub entries_checked: usize,
    pub worst_param: String,
    pub worst_index: usize,
}

/// Compares analytic gradients against central differences for every entry of
/// every parameter (or a seeded subsample of `sample_cap` entries for tensors
/// larger than that). Relative error is |a-n| / max(1e-8, |a|+|n|).
///
/// The builder must construct the same graph for any parameter values; the
/// tape seed inside the builder must be fixed so dropout masks are identical
/// across probe evaluations.
pub fn grad_check<F>(
    params: &ParamSet,
    build: F,
    eps: f64,
    sample_cap: usize,
    seed: u64,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&ParamSet) -> Result<(Tape, Var), NumericsError> + Sync,
{
    assert!(
        (1e-6..=1e-2).contains(&eps),
        "grad_check eps {eps} outside [1e-6, 1e-2]"
    );
    let (tape, loss) = build(params)?;
    let analytic = tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes: Vec<(String, usize, f64)> = Vec::new();
    for (name, grad) in &analytic {
        let n = grad.len();
        let picked: Vec<usize> = if n <= sample_cap {
            (0..n).collect()
        } else {
            let mut idx = sample(&mut rng, n, sample_cap).into_vec();
            idx.sort_unstable();
            idx
        };
        for i in picked {
            probes.push((name.clone(), i, grad.data()[i]));
        }
    }

    let errors = exec::map_collect(probes, |(name, i, a)| {
        let eval = |delta: f64| -> Result<f64, NumericsError> {
            let mut p = params.clone();
            p.get_mut(&name).expect("param exists").data_mut()[i] += delta;
            let (t, l) = build(&p)?;
            Ok(t.value(l).item())
        };
        let numeric = match (eval(eps), eval(-eps)) {
            (Ok(lp), Ok(lm)) => (lp - lm) / (2.0 * eps),
            _ => f64::NAN,
        };
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        (name, i, rel)
    });

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        entries_checked: errors.len(),
        worst_param: String::new(),
        worst_index: 0,
    };
    for (name, i, rel) in errors {
        if rel > report.max_rel_err || !rel.is_finite() {
            report.max_rel_err = rel;
            report.worst_param = name;
            report.worst_index = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_toy_graph_is_exact() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(&[1.5, -0.3, 2.0]));
        let report = grad_check(
            &params,
            |p| {
                let mut tape = Tape::new(0, false);
                let w = tape.param("w", p.get("w").unwrap().clone());
                let sq = tape.mul(w, w)?;
                let loss = tape.sum_all(sq);
                Ok((tape, loss))
            },
            1e-4,
            usize::MAX,
            0,
        )
        .unwrap();
        assert_eq!(report.entries_checked, 3);
        assert!(report.max_rel_err < 1e-8, "err {}", report.max_rel_err);
    }

    #[test]
    fn dead_parameter_matches_both_ways() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::scalar(2.0));
        params.insert("dead", Tensor::scalar(5.0));
        let report = grad_check(
            &params,
            |p| {
                let mut tape = Tape::new(0, false);
                let w = tape.param("w", p.get("w").unwrap().clone());
                let _dead = tape.param("dead", p.get("dead").unwrap().clone());
                let sq = tape.mul(w, w)?;
                let loss = tape.sum_all(sq);
                Ok((tape, loss))
            },
            1e-3,
            usize::MAX,
            0,
        )
        .unwrap();
        // dead entry: analytic 0, numeric 0 -> rel err 0
        assert!(report.max_rel_err < 1e-8);
    }

    #[test]
    fn mixed_op_graph_passes() {
        let mut params = ParamSet::new();
        params.insert(
            "w",
            Tensor::matrix(3, 4, (0..12).map(|i| 0.31 * i as f64 - 1.7).collect()).unwrap(),
        );
        params.insert("b", Tensor::vector(&[0.1, -0.2, 0.3, 0.4]));
        let report = grad_check(
            &params,
            |p| {
                let mut tape = Tape::new(0, false);
                let w = tape.param("w", p.get("w").unwrap().clone());
                let b = tape.param("b", p.get("b").unwrap().clone());
                let x = tape.input(
                    Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.0, 0.25, -0.75]).unwrap(),
                );
                let h = tape.matmul(x, w)?;
                let h = tape.add_row(h, b)?;
                let h = tape.gelu(h);
                let h = tape.layer_norm(h)?;
                let h = tape.softmax(h)?;
                let sq = tape.mul(h, h)?;
                let loss = tape.mean_all(sq);
                Ok((tape, loss))
            },
            1e-4,
            usize::MAX,
            0,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-5, "err {}", report.max_rel_err);
    }
}
