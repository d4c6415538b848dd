use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::net::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay: each step also shrinks a parameter by
    /// `learning_rate * weight_decay * param`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

/// Moment estimates for every parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: ParamSet,
    second: ParamSet,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        AdamState {
            config,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    /// One bias-corrected Adam step with decoupled weight decay.
    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_same_shapes(grads)?;
        params.check_same_shapes(&self.first)?;
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let moments = self.first.iter_mut().zip(self.second.iter_mut());
        for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments)
        {
            let p = p.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= c.learning_rate * c.weight_decay * p[i];
                p[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::update`].
pub fn adam_update(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<()> {
    state.update(params, grads)
}
