//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::{ParamGrads, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamWState {
    pub fn new(params: &ParamSet) -> Self {
        AdamWState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Scalar AdamW update for one element; shared by the tensor path.
#[inline]
fn update(theta: &mut f64, g: f64, m: &mut f64, v: &mut f64, cfg: &AdamWConfig, lr: f64, c1: f64, c2: f64) {
    *theta -= lr * cfg.weight_decay * *theta;
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let m_hat = *m / c1;
    let v_hat = *v / c2;
    *theta -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
}

/// One AdamW step at learning rate `lr`. Parameters are untouched if any
/// gradient is non-finite.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &ParamGrads,
    state: &mut AdamWState,
    cfg: &AdamWConfig,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads.tensors() {
        if let Some((index, &value)) = g.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: name.to_string(),
                index,
                value,
            });
        }
    }
    for ((name, p), (_, g)) in params.tensors().iter().zip(grads.tensors()) {
        if p.shape() != g.shape() {
            return Err(Error::InvalidShape(format!(
                "{name}: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let AdamWState { m, v, .. } = state;
    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(m.tensors_mut().into_iter().zip(v.tensors_mut()))
    {
        for (((theta, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            update(theta, gi, mi, vi, cfg, lr, c1, c2);
        }
    }
    Ok(())
}
