use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.98;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment buffers for a fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// One bias-corrected Adam update of every parameter in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len(), state.m.len()]));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::shape("adam_step", p.shape(), &[g.len()]));
        }
    }
    if !(lr > 0.0) {
        return Err(Error::Domain {
            op: "adam_step",
            msg: format!("learning rate must be positive, got {lr}"),
        });
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear warm-up followed by inverse square-root decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64) -> Result<Self> {
        if !(base_lr > 0.0) || warmup_steps == 0 {
            return Err(Error::Config(vec![format!(
                "lr schedule needs base_lr > 0 and warmup_steps >= 1 (got {base_lr}, {warmup_steps})"
            )]));
        }
        Ok(Self { base_lr, warmup_steps })
    }

    /// `base_lr * min(t / W, sqrt(W / t))` for step `t >= 1`.
    pub fn lr_at(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::Domain {
                op: "lr_at",
                msg: "steps are counted from 1".into(),
            });
        }
        let (t, w) = (t as f64, self.warmup_steps as f64);
        Ok(self.base_lr * (t / w).min((w / t).sqrt()))
    }
}
