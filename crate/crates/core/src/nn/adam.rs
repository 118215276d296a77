//! Adam with bias correction, over named flat parameter slices.

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one pair per parameter tensor, in the same
/// order the model enumerates its parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// A named view into one parameter tensor's storage.
pub type ParamRef<'a> = (String, &'a mut [f64]);
/// A named view into one gradient tensor's storage.
pub type GradRef<'a> = (String, &'a [f64]);

/// One Adam update over aligned (parameter, gradient) slices. If any gradient
/// entry is non-finite the whole update is skipped and reported as
/// `NanGradient`, leaving parameters and moments untouched.
pub fn adam_step(
    params: &mut [ParamRef<'_>],
    grads: &[GradRef<'_>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count mismatch");
    assert_eq!(params.len(), state.m.len(), "optimizer state tensor count mismatch");
    for ((name, p), (gname, g)) in params.iter().zip(grads.iter()) {
        debug_assert_eq!(name, gname, "parameter order mismatch");
        assert_eq!(p.len(), g.len(), "size mismatch for {name}");
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NanGradient(name.to_string()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for (i, ((_, p), (_, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
