use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::default(),
        }
    }

    pub fn with_state(config: AdamConfig, state: AdamState) -> Self {
        Self { config, state }
    }

    /// One bias-corrected Adam update. Frozen parameters and parameters
    /// without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for p in params.iter_mut().filter(|p| p.trainable) {
            let Some(g) = grads.get(&p.name) else {
                continue;
            };
            if g.shape() != p.tensor.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "`{}`: gradient {:?} vs parameter {:?}",
                        p.name,
                        g.shape(),
                        p.tensor.shape()
                    ),
                ));
            }
            let n = p.tensor.len();
            let m = self.state.m.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.state.v.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            if m.len() != n || v.len() != n {
                return Err(Error::shape(
                    "adam_step",
                    format!("`{}`: optimizer state does not match parameter", p.name),
                ));
            }
            for (((w, gi), mi), vi) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn grads_of(name: &str, g: Vec<f64>) -> Gradients {
        let mut out = Gradients::new();
        out.accumulate(name, Tensor::vector(g));
        out
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::vector(vec![1.0, -2.0]), true).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &grads_of("p", vec![0.0, 0.0])).unwrap();
        assert_eq!(store.tensor("p").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::vector(vec![0.0]), true).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &grads_of("p", vec![1.0])).unwrap();
        let (m1, v1) = (adam.state.m["p"][0], adam.state.v["p"][0]);
        adam.step(&mut store, &grads_of("p", vec![0.0])).unwrap();
        assert!((adam.state.m["p"][0] - 0.9 * m1).abs() < 1e-15);
        assert!((adam.state.v["p"][0] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::vector(vec![0.0]), true).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(0.01));
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..500 {
            adam.step(&mut store, &grads_of("p", vec![-3.0])).unwrap();
            let now = store.tensor("p").unwrap().data()[0];
            last_step = now - prev;
            prev = now;
        }
        assert!((last_step - 0.01).abs() < 1e-6, "{last_step}");
    }

    #[test]
    fn three_step_scalar_trace_matches_hand_recurrence() {
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let gs = [0.5, -1.0, 2.0];
        // hand-unrolled recurrence
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 1.0f64);
        for (i, g) in gs.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        // step 1 in closed form: m_hat = g, v_hat = g^2
        let w1 = 1.0 - lr * 0.5 / (0.5 + eps);
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0]), true).unwrap();
        let mut adam = Adam::new(AdamConfig {
            lr,
            beta1: b1,
            beta2: b2,
            eps,
        });
        adam.step(&mut store, &grads_of("w", vec![gs[0]])).unwrap();
        assert!((store.tensor("w").unwrap().data()[0] - w1).abs() < 1e-15);
        for g in &gs[1..] {
            adam.step(&mut store, &grads_of("w", vec![*g])).unwrap();
        }
        assert!((store.tensor("w").unwrap().data()[0] - w).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0]), false).unwrap();
        store.insert("e", Tensor::vector(vec![1.0]), true).unwrap();
        let mut g = grads_of("w", vec![1.0]);
        g.accumulate("e", Tensor::vector(vec![1.0]));
        Adam::new(AdamConfig::default()).step(&mut store, &g).unwrap();
        assert_eq!(store.tensor("w").unwrap().data(), &[1.0]);
        assert!(store.tensor("e").unwrap().data()[0] < 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 2.0]), true).unwrap();
        let g = grads_of("w", vec![1.0]);
        assert!(Adam::new(AdamConfig::default()).step(&mut store, &g).is_err());
    }
}
