//! Adam with decoupled weight decay.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore};
use crate::tensor::{Mat, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment buffers, lazily sized to the store on the first step.
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Mat<F>>,
    v: Vec<Mat<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return Err(Error::Config(alloc::format!(
                "training.learning_rate must be > 0, got {}",
                config.learning_rate
            )));
        }
        Ok(Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient still receive weight decay
    /// if they are decaying, matching a framework that steps every tensor.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Grads<F>) {
        if self.m.is_empty() {
            for (_, _, t) in store.iter() {
                self.m.push(Mat::zeros(t.rows(), t.cols()));
                self.v.push(Mat::zeros(t.rows(), t.cols()));
            }
        }
        self.step += 1;
        let c = self.config;
        let b1 = F::from_f64_lossy(c.beta1);
        let b2 = F::from_f64_lossy(c.beta2);
        let one = F::one();
        let bc1 = F::from_f64_lossy(1.0 - libm::pow(c.beta1, self.step as f64));
        let bc2 = F::from_f64_lossy(1.0 - libm::pow(c.beta2, self.step as f64));
        let lr = F::from_f64_lossy(c.learning_rate);
        let eps = F::from_f64_lossy(c.epsilon);
        let decay = F::one() - lr * F::from_f64_lossy(c.weight_decay);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let decays = store.decays(id);
            let p = store.get_mut(id);
            if decays && c.weight_decay != 0.0 {
                p.scale_assign(decay);
            }
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[id.0].as_mut_slice();
            let v = self.v[id.0].as_mut_slice();
            for (((p, g), m), v) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
pub fn clip_grad_norm<F: Scalar>(grads: &mut Grads<F>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().to_f64_lossy();
    if norm > max_norm && norm > 0.0 {
        grads.scale(F::from_f64_lossy(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.push("w", Mat::scalar(1.0), false);
        let mut grads = Grads::empty(1);
        grads.accumulate(id, &Mat::scalar(3.0));
        let mut opt = AdamW::new(AdamWConfig {
            learning_rate: 0.1,
            ..AdamWConfig::default()
        })
        .unwrap();
        opt.step(&mut store, &grads);
        assert!((store.get(id).get(0, 0) - 0.9).abs() < 1e-6);
    }

    #[test]
    fn decay_is_decoupled_and_selective() {
        let mut store = ParamStore::<f64>::new();
        let w = store.push("w", Mat::scalar(2.0), true);
        let b = store.push("b", Mat::scalar(2.0), false);
        let grads = Grads::empty(2);
        let mut opt = AdamW::new(AdamWConfig {
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        })
        .unwrap();
        opt.step(&mut store, &grads);
        assert!((store.get(w).get(0, 0) - 1.9).abs() < 1e-12);
        assert_eq!(*store.get(b).get(0, 0), 2.0);
    }

    #[test]
    fn rejects_non_positive_rate() {
        assert!(AdamW::<f32>::new(AdamWConfig {
            learning_rate: 0.0,
            ..AdamWConfig::default()
        })
        .is_err());
    }
}
