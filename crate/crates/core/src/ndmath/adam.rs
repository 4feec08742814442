use serde::{Deserialize, Serialize};

use super::tensor::{ParamTape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one [`ParamTape`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamTape, config: AdamConfig) -> Self {
        let zeros = || params.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update using the gradients stored in `params`.
    ///
    /// Gradients are validated before anything is modified, so a NaN leaves
    /// both the parameters and the moments untouched.
    pub fn step(&mut self, params: &mut ParamTape) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape("adam parameter count", self.m.len(), params.len()));
        }
        for (i, g) in params.grads().iter().enumerate() {
            if g.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    format!("adam moments for {}", params.name(i)),
                    format!("{:?}", self.m[i].shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", params.name(i))));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);

        let (_, values, grads) = params.params_and_grads_mut();
        for (i, p) in values.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_tape(w: f64) -> ParamTape {
        let mut t = ParamTape::new();
        t.push("w", Tensor::vector(vec![w])).unwrap();
        t
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut tape = scalar_tape(1.25);
        let mut adam = AdamState::new(&tape, AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut tape).unwrap();
        }
        assert_eq!(tape.param(0).data(), &[1.25]);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 at t = 1, so the step is lr * g / |g|.
        for g in [-3.0, 0.01, 7.5] {
            let mut tape = scalar_tape(0.0);
            tape.set_grad(0, Tensor::vector(vec![g])).unwrap();
            let cfg = AdamConfig {
                learning_rate: 0.05,
                epsilon: 0.0,
                ..AdamConfig::default()
            };
            let mut adam = AdamState::new(&tape, cfg);
            adam.step(&mut tape).unwrap();
            let moved = tape.param(0).data()[0];
            assert!((moved.abs() - 0.05).abs() < 1e-12);
            assert_eq!(moved.signum(), -g.signum());
        }
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut tape = scalar_tape(0.0);
        let mut adam = AdamState::new(
            &tape,
            AdamConfig {
                learning_rate: 0.1,
                ..AdamConfig::default()
            },
        );
        for _ in 0..200 {
            let w = tape.param(0).data()[0];
            tape.set_grad(0, Tensor::vector(vec![2.0 * (w - 3.0)])).unwrap();
            adam.step(&mut tape).unwrap();
        }
        assert!((tape.param(0).data()[0] - 3.0).abs() < 0.1);
    }

    #[test]
    fn nan_gradient_aborts_with_name() {
        let mut tape = scalar_tape(0.0);
        tape.set_grad(0, Tensor::vector(vec![f64::NAN])).unwrap();
        let mut adam = AdamState::new(&tape, AdamConfig::default());
        let err = adam.step(&mut tape).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref s) if s.contains('w')));
        assert_eq!(adam.step_count(), 0);
        assert_eq!(tape.param(0).data(), &[0.0]);
    }
}
