use crate::diffnet::NetParams;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates and step count of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: NetParams,
    pub v: NetParams,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &NetParams) -> Self {
        Self {
            t: 0,
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut NetParams, grads: &NetParams) -> Result<()> {
    if !grads.is_finite() {
        let bad = grads.flat().iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(Error::NonFinite(bad));
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape("gradient, moment and parameter sizes differ"));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.lr;
    let eps = state.epsilon;
    let ms = state.m.params_mut().iter_mut();
    let vs = state.v.params_mut().iter_mut();
    for (((p, g), m), v) in params.params_mut().iter_mut().zip(grads.params()).zip(ms).zip(vs) {
        let p = p.value.data_mut();
        let g = g.value.data();
        let m = m.value.data_mut();
        let v = v.value.data_mut();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::NetConfig;

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = NetConfig::tiny();
        let mut p = NetParams::init_kaiming(&cfg, 1);
        let before = p.flat();
        let mut g = p.zeros_like();
        for q in g.params_mut() {
            q.value.data_mut().fill(1.0);
        }
        let mut s = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut s, &mut p, &g).unwrap();
        let expected = 1e-3 / (1.0 + 1e-8);
        for (a, b) in before.iter().zip(p.flat()) {
            assert!((a - b - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_is_null_update_and_runs_repeat() {
        let cfg = NetConfig::tiny();
        let p0 = NetParams::init_kaiming(&cfg, 2);
        let mut p = p0.clone();
        let mut s = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut s, &mut p, &p0.zeros_like()).unwrap();
        assert_eq!(p, p0);

        let run = || {
            let mut p = p0.clone();
            let mut s = AdamState::new(AdamConfig::default(), &p);
            for _ in 0..3 {
                let g = p.clone();
                adam_step(&mut s, &mut p, &g).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let cfg = NetConfig::tiny();
        let mut p = NetParams::zeros(&cfg);
        let mut g = p.zeros_like();
        g.set_flat(3, f64::NAN);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        assert!(adam_step(&mut s, &mut p, &g).is_err());
        assert_eq!(s.t, 0);
    }
}
