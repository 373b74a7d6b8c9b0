//! Adam with decoupled weight decay and a linear warmup / linear decay
//! learning-rate schedule.
//!
//! ```text
//! lr(t) = peak · t / warmup                       t < warmup
//!       = peak · (total − t) / (total − warmup)   warmup ≤ t < total
//!       = 0                                       t ≥ total
//! ```
//!
//! `t` is the number of updates already applied, so the very first update
//! runs at `lr(0)` (zero whenever warmup is non-zero).

use log::warn;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Gradients are rescaled so their global L2 norm does not exceed this.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    /// Warmup over the first `warmup_fraction` of `total_steps`.
    pub fn with_warmup_fraction(total_steps: usize, warmup_fraction: f64) -> Self {
        Schedule {
            warmup_steps: (total_steps as f64 * warmup_fraction).round() as usize,
            total_steps,
        }
    }

    pub fn factor(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            0.0
        } else if step < self.warmup_steps {
            step as f64 / self.warmup_steps as f64
        } else {
            (self.total_steps - step) as f64 / (self.total_steps - self.warmup_steps) as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub schedule: Schedule,
    step_count: usize,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, schedule: Schedule, params: &ParamStore) -> Result<Self> {
        if config.learning_rate <= 0.0 || !config.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if schedule.total_steps == 0 {
            return Err(Error::InvalidArgument("total_steps must be positive".into()));
        }
        if schedule.warmup_steps > schedule.total_steps {
            return Err(Error::InvalidArgument("warmup longer than the schedule".into()));
        }
        if config.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("negative weight decay".into()));
        }
        let zeros = |p: &ParamStore| p.iter().map(|g| Tensor::zeros(g.value.shape())).collect();
        Ok(OptimizerState {
            config,
            schedule,
            step_count: 0,
            first_moment: zeros(params),
            second_moment: zeros(params),
        })
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Learning rate the next update will use.
    pub fn current_learning_rate(&self) -> f64 {
        self.config.learning_rate * self.schedule.factor(self.step_count)
    }

    /// Applies one update from the gradients held in `params`. Returns the
    /// learning rate used.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<f64> {
        if params.len() != self.first_moment.len() {
            return Err(Error::Shape("optimizer built for a different parameter set".into()));
        }
        if self.step_count >= self.schedule.total_steps {
            warn!(
                "optimizer step {} is past the schedule end ({}); learning rate is 0",
                self.step_count, self.schedule.total_steps
            );
        }
        let lr = self.current_learning_rate();
        let cfg = &self.config;

        let clip = match cfg.clip_norm {
            Some(max) => {
                let norm = params
                    .iter()
                    .flat_map(|g| g.grad.data())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        let t = (self.step_count + 1) as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for ((group, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let decay = if group.decay { cfg.weight_decay } else { 0.0 };
            let values = group.value.data_mut();
            for (i, &raw) in group.grad.data().iter().enumerate() {
                let g = raw * clip;
                let mi = &mut m.data_mut()[i];
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
                let vi = &mut v.data_mut()[i];
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                let m_hat = m.data()[i] / bias1;
                let v_hat = v.data()[i] / bias2;
                let update = m_hat / (v_hat.sqrt() + cfg.eps) + decay * values[i];
                values[i] -= lr * update;
            }
        }
        self.step_count += 1;
        Ok(lr)
    }
}
