// SPDX-License-Identifier: MIT OR Apache-2.0

//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use crate::error::ProbeError;

/// Hyper-parameters of the AdamW update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment estimates and the number of steps taken so far.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }
}

/// One AdamW update, in place.
///
/// ```text
/// w <- w - lr * wd * w
/// m <- b1 m + (1 - b1) g          v <- b2 v + (1 - b2) g^2
/// w <- w - lr * m_hat / (sqrt(v_hat) + eps)
/// ```
///
/// The decay term uses the weights from before the adaptive step. Nothing is
/// modified when an error is returned.
pub fn adamw_step(
    weights: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    params: &AdamWParams,
    lr: f64,
) -> Result<(), ProbeError> {
    if grad.len() != weights.len() {
        return Err(ProbeError::Shape {
            expected: weights.len(),
            found: grad.len(),
        });
    }
    if state.m.len() != weights.len() || state.v.len() != weights.len() {
        return Err(ProbeError::Shape {
            expected: weights.len(),
            found: state.m.len().min(state.v.len()),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(ProbeError::NonFiniteGradient(i));
    }

    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - params.beta1.powi(t);
    let correction2 = 1.0 - params.beta2.powi(t);
    for (((w, &g), m), v) in weights
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = params.beta1 * *m + (1.0 - params.beta1) * g;
        *v = params.beta2 * *v + (1.0 - params.beta2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        let decay = lr * params.weight_decay * *w;
        let adaptive = lr * m_hat / (v_hat.sqrt() + params.epsilon);
        *w = *w - decay - adaptive;
    }
    Ok(())
}

/// `lr_min + (lr_max - lr_min) * (1 + cos(pi * t / total)) / 2` for `t` in `[0, total]`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64, ProbeError> {
    if total == 0 || t > total {
        return Err(ProbeError::EpochOutOfRange { t, total });
    }
    // exact endpoints, independent of cos rounding
    if t == 0 {
        return Ok(lr_max);
    }
    if t == total {
        return Ok(lr_min);
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}
