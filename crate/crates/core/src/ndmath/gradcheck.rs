use super::tensor::ParamTape;
use crate::error::{Error, Result};

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares the gradients stored in `params` against central differences of `f`.
///
/// Per coordinate the error is `|a - c| / (|a| + |c| + 1e-12)`; the maximum
/// over every scalar of every parameter is returned.
pub fn finite_diff_check<F>(mut f: F, params: &ParamTape, h: f64) -> Result<GradCheck>
where
    F: FnMut(&ParamTape) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
    };
    for i in 0..params.len() {
        for k in 0..params.param(i).len() {
            let orig = params.param(i).data()[k];
            probe.param_mut(i).data_mut()[k] = orig + h;
            let up = f(&probe)?;
            probe.param_mut(i).data_mut()[k] = orig - h;
            let down = f(&probe)?;
            probe.param_mut(i).data_mut()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at {}[{k}] +/- {h}",
                    params.name(i)
                )));
            }
            let central = (up - down) / (2.0 * h);
            let analytic = params.grad(i).data()[k];
            let rel = (analytic - central).abs() / (analytic.abs() + central.abs() + 1e-12);
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.name(i).to_string(), k));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::Tensor;

    fn tape(values: &[f64]) -> ParamTape {
        let mut t = ParamTape::new();
        t.push("p", Tensor::vector(values.to_vec())).unwrap();
        t
    }

    fn quadratic(t: &ParamTape) -> Result<f64> {
        Ok(t.param(0).data().iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x * x).sum())
    }

    #[test]
    fn quadratic_is_exact() {
        let mut t = tape(&[0.3, -1.2, 2.5]);
        let g = t.param(0).data().iter().enumerate().map(|(i, x)| 2.0 * (i as f64 + 1.0) * x).collect();
        t.set_grad(0, Tensor::vector(g)).unwrap();
        let r = finite_diff_check(quadratic, &t, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn tanh_composite() {
        let f = |t: &ParamTape| -> Result<f64> {
            let d = t.param(0).data();
            Ok((d[0] * d[1]).tanh() + (d[1] - 0.5 * d[0]).tanh().powi(2))
        };
        let (a, b) = (0.7f64, -0.4f64);
        let s1 = 1.0 - (a * b).tanh().powi(2);
        let t2 = (b - 0.5 * a).tanh();
        let s2 = 2.0 * t2 * (1.0 - t2 * t2);
        let mut t = tape(&[a, b]);
        t.set_grad(0, Tensor::vector(vec![s1 * b - 0.5 * s2, s1 * a + s2])).unwrap();
        let r = finite_diff_check(f, &t, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut t = tape(&[0.3, -1.2, 2.5]);
        let mut g: Vec<f64> = t.param(0).data().iter().enumerate().map(|(i, x)| 2.0 * (i as f64 + 1.0) * x).collect();
        g[1] += 0.1;
        t.set_grad(0, Tensor::vector(g)).unwrap();
        let r = finite_diff_check(quadratic, &t, 1e-5).unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst, Some(("p".to_string(), 1)));
    }

    #[test]
    fn non_finite_objective_names_parameter() {
        let t = tape(&[0.0]);
        let err = finite_diff_check(|t| Ok(t.param(0).data()[0].ln()), &t, 1e-5).unwrap_err();
        assert!(err.to_string().contains("p[0]"), "{err}");
    }
}
