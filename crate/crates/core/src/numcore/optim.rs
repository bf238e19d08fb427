use serde::{Deserialize, Serialize};

use super::{NumError, ParamStore, Tensor};

/// Global gradient-norm ceiling applied before every update.
pub const CLIP_NORM: f64 = 5.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: CLIP_NORM,
        }
    }
}

/// Adam moments for every parameter of one store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Clips, updates every parameter, zeroes gradients.
    ///
    /// Gradients that are exactly zero leave their parameter untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NumError> {
        for p in store.iter() {
            if !p.grad.all_finite() {
                return Err(NumError::NonFinite {
                    what: format!("gradient of {}", p.name),
                });
            }
        }
        let norm = store.grad_norm();
        let clip = if norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            lr, beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let grad = store.grad(id).scaled(clip);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let mut delta = vec![0.0; grad.len()];
            for k in 0..grad.len() {
                let g = grad.data()[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                if m[k] == 0.0 {
                    continue;
                }
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                delta[k] = lr * m_hat / (v_hat.sqrt() + eps);
            }
            for (w, d) in store.value_mut(id).data_mut().iter_mut().zip(delta) {
                *w -= d;
            }
        }
        store.zero_grad();
        Ok(())
    }
}

/// Scale factor the optimizer applies to a gradient of the given norm.
pub fn clip_factor(norm: f64, max_norm: f64) -> f64 {
    if norm > max_norm {
        max_norm / norm
    } else {
        1.0
    }
}
