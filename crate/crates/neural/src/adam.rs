use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0;
        if !ok {
            return Err(NeuralError::Config(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(NeuralError::Shape {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len(), state.m.len(), state.v.len()],
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3, -1.2];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_is_about_lr() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[1.0, -3.0], &mut s, &cfg).unwrap();
        // m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps)
        assert!((p[0] + 2e-4 / (1.0 + 1e-8)).abs() < 1e-18);
        assert!((p[1] - 2e-4 * 3.0 / (3.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn oscillating_gradient_shrinks_step() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &cfg).unwrap();
        let d1 = p[0];
        adam_step(&mut p, &[-1.0], &mut s, &cfg).unwrap();
        let d2 = p[0] - d1;
        // by hand: m2 = 0.5 * 0.5 - 0.5 = -0.25, m_hat = -0.25 / 0.75 = -1/3;
        // v2 = 0.999 * 0.001 + 0.001 = 0.001999, v_hat = 0.001999 / (1 - 0.999^2) = 1
        let expected = 2e-4 * (1.0 / 3.0) / (1.0 + 1e-8);
        assert!((d2 - expected).abs() < 1e-15, "{d2} vs {expected}");
        assert!(d2.abs() < d1.abs());
    }

    #[test]
    fn length_mismatch_is_error() {
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut [0.0, 0.0], &[1.0], &mut s, &AdamConfig::default()).is_err());
    }
}
