use serde::{Deserialize, Serialize};

use super::layers::ParamStore;
use super::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    pub step: usize,
}

impl<T: Float> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .params
                .iter()
                .map(|p| vec![T::zero(); p.tensor.len()])
                .collect()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Vec<T>]) {
        assert_eq!(grads.len(), store.params.len(), "one gradient per parameter");
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let step_size = T::of(c.lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let eps = T::of(c.eps);
        for (i, p) in store.params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.tensor.data.iter_mut().enumerate() {
                let g = grads[i][j];
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                *w -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
    }
}
