//! AdamW with decoupled weight decay, learning-rate schedules and global
//! gradient-norm clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{GradMap, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
}

impl AdamWState {
    pub fn new() -> Self {
        Self {
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }
}

impl Default for AdamWState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    pub fn with_weight_decay(weight_decay: f64) -> Self {
        Self {
            weight_decay,
            ..Self::default()
        }
    }

    /// One update of every parameter that has an entry in `grads`.
    /// Parameters without a gradient are left untouched.
    pub fn step(&self, params: &mut ParamStore, grads: &GradMap, state: &mut AdamWState, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::training(format!("learning rate {lr} is not a finite nonnegative number")));
        }
        for (name, g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::training(format!("gradient of `{name}` is not finite")));
            }
            let p = params
                .get(name)
                .ok_or_else(|| Error::State(format!("gradient for unknown parameter `{name}`")))?;
            if p.len() != g.len() {
                return Err(Error::shape(format!(
                    "gradient of `{name}` has {} values, parameter has {}",
                    g.len(),
                    p.len()
                )));
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let n = g.len();
            let m = state.first_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = state.second_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let p = params.get_mut(name).expect("checked above").values_mut();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * self.weight_decay * p[i];
                p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Linear ramp 0→peak over the warmup, then linear decay to zero.
    #[default]
    WarmupLinear,
    /// Constant peak over the warmup, then linear decay to zero.
    HoldThenLinear,
}

/// Warmup-then-linear-decay learning rate.
pub fn lr_schedule(step: u64, peak: f64, warmup_steps: u64, total_steps: u64) -> Result<f64> {
    lr_schedule_with(ScheduleKind::WarmupLinear, step, peak, warmup_steps, total_steps)
}

pub fn lr_schedule_with(kind: ScheduleKind, step: u64, peak: f64, warmup_steps: u64, total_steps: u64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::config("train.total_steps", "must be positive"));
    }
    if warmup_steps >= total_steps {
        return Err(Error::config(
            "train.warmup_steps",
            format!("warmup {warmup_steps} must be below total steps {total_steps}"),
        ));
    }
    if step > total_steps {
        return Err(Error::config(
            "train.total_steps",
            format!("step {step} is past the end of the schedule ({total_steps})"),
        ));
    }
    if step <= warmup_steps {
        return Ok(match kind {
            ScheduleKind::WarmupLinear if warmup_steps > 0 => peak * step as f64 / warmup_steps as f64,
            _ => peak,
        });
    }
    Ok(peak * (total_steps - step) as f64 / (total_steps - warmup_steps) as f64)
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut GradMap, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
