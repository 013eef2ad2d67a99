//! Adam (bias correction optional, off by default) and the linear warmup
//! schedule: the rate climbs from τ/warmup_steps to τ over the first
//! ceil(warmup_fraction · total_steps) steps, then stays constant.

use crate::tensor::{TensorMap, TensorValue};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bias_correction: bool,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            bias_correction: false,
        }
    }
}

/// Per-tensor first and second moment accumulators.
pub struct Adam {
    settings: AdamSettings,
    m: TensorMap,
    v: TensorMap,
    t: u64,
}

impl Adam {
    pub fn new(settings: AdamSettings) -> Self {
        Adam {
            settings,
            m: TensorMap::new(),
            v: TensorMap::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update with the given (already warmed-up) rate. Gradients
    /// absent from `grads` leave their tensors untouched; masked entries can
    /// be zeroed by the caller beforehand.
    pub fn step(&mut self, tensors: &mut TensorMap, grads: &TensorMap, lr: f64) {
        self.t += 1;
        let s = self.settings;
        let bc1 = if s.bias_correction {
            1.0 - s.beta1.powi(self.t as i32)
        } else {
            1.0
        };
        let bc2 = if s.bias_correction {
            1.0 - s.beta2.powi(self.t as i32)
        } else {
            1.0
        };
        for (name, grad) in grads {
            let Some(theta) = tensors.get_mut(name) else {
                continue;
            };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| TensorValue::zeros(grad.shape().to_vec()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| TensorValue::zeros(grad.shape().to_vec()));
            for ((w, g), (mi, vi)) in theta
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = s.beta1 * *mi + (1.0 - s.beta1) * g;
                *vi = s.beta2 * *vi + (1.0 - s.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + s.epsilon);
            }
        }
    }
}

/// Learning rate for 1-based `step` out of `total_steps`: linear warmup to
/// `base` at `warmup_steps = ceil(warmup_fraction · total_steps)`, constant
/// afterwards (no decay).
pub fn warmup_lr(base: f64, step: u64, total_steps: u64, warmup_fraction: f64) -> f64 {
    let warmup_steps = (warmup_fraction * total_steps as f64).ceil() as u64;
    if warmup_steps == 0 || step >= warmup_steps {
        base
    } else {
        base * step as f64 / warmup_steps as f64
    }
}
