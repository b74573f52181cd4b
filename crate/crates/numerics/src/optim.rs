use indexmap::IndexMap;

use crate::error::{shape_err, NumericsError, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// AdamW with decoupled weight decay. Moment buffers are created lazily the
/// first time a parameter receives a gradient.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: IndexMap<String, (Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, moments: IndexMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update to every non-frozen parameter that has a gradient.
    /// Frozen parameters are never touched.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) -> Result<()> {
        let trainable: Vec<String> = store.names().filter(|n| !store.is_frozen(n)).map(str::to_string).collect();
        if !trainable.is_empty() && !trainable.iter().any(|n| grads.get(n).is_some()) {
            return Err(NumericsError::MissingGradient(trainable[0].clone()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for name in trainable {
            let Some(g) = grads.get(&name) else { continue };
            let w = store.get_mut(&name).expect("listed above");
            if w.shape() != g.shape() && w.len() != g.len() {
                return Err(shape_err("adamw", format!("{name}: {:?} vs {:?}", w.shape(), g.shape())));
            }
            let (m, v) = self.moments.entry(name).or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, (wi, &gi)) in w.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *wi -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *wi);
            }
        }
        Ok(())
    }
}
