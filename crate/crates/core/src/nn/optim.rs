use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{GradientSet, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        Self {
            m: ParameterSet::zeros_like(params),
            v: ParameterSet::zeros_like(params),
            step: 0,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_update(params: &mut ParameterSet, grads: &GradientSet, state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.m.tensors)
        .zip(&mut state.v.tensors)
    {
        Zip::from(&mut p.value)
            .and(&g.value)
            .and(&mut m.value)
            .and(&mut v.value)
            .for_each(|p, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            });
    }
}

/// `target ← (1-τ)·target + τ·online`, computed as `target + τ·(online - target)`.
pub fn soft_update(target: &mut ParameterSet, online: &ParameterSet, tau: f64) {
    debug_assert!(tau > 0.0 && tau <= 1.0);
    for (t, o) in target.tensors.iter_mut().zip(&online.tensors) {
        if tau == 1.0 {
            t.value.assign(&o.value);
        } else {
            Zip::from(&mut t.value)
                .and(&o.value)
                .for_each(|t, &o| *t += tau * (o - *t));
        }
    }
}
