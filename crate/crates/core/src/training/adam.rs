//! Adam with a per-step multiplicative learning-rate decay.

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamId, ParamStore};

use super::config::AdamConfig;

/// Optimizer state for a fixed set of parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore, ids: Vec<ParamId>) -> Self {
        let m: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; store.value(id).len()]).collect();
        Adam {
            config,
            v: m.clone(),
            m,
            ids,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// Learning rate the next step will use: `lr * decay^steps`.
    pub fn effective_rate(&self) -> f64 {
        self.config.learning_rate * self.config.decay.powf(self.step as f64)
    }

    /// Applies one update from `grads`. Parameters absent from `grads` see a
    /// zero gradient. Any non-finite gradient aborts before anything changes.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for &id in &self.ids {
            if let Some(g) = grads.param(id) {
                if g.data().iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient(store.get(id).name.clone()));
                }
            }
        }
        let c = &self.config;
        let lr = self.effective_rate();
        let t = (self.step + 1) as f64;
        let bias1 = 1.0 - c.beta1.powf(t);
        let bias2 = 1.0 - c.beta2.powf(t);
        for (k, &id) in self.ids.iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let grad = grads.param(id).map(|g| g.data());
            let value = store.value_mut(id).data_mut();
            for i in 0..value.len() {
                let gi = grad.map_or(0.0, |g| g[i]);
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        self.step += 1;
        Ok(())
    }
}
