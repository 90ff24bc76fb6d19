use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Length of the whole schedule, in steps.
    pub total_steps: usize,
    /// Fraction of `total_steps` spent on the linear warmup.
    pub warmup_fraction: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps: 5000,
            warmup_fraction: 0.05,
        }
    }
}

impl AdamConfig {
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).ceil() as usize
    }

    /// Learning rate for 1-based step `t`: linear ramp from zero over the
    /// warmup, then cosine decay to zero at `total_steps`.
    pub fn lr_at(&self, t: usize) -> f64 {
        let warmup = self.warmup_steps();
        if t == 0 {
            return 0.0;
        }
        if t <= warmup {
            return self.lr * t as f64 / warmup as f64;
        }
        let span = self.total_steps.saturating_sub(warmup).max(1) as f64;
        let progress = ((t - warmup) as f64 / span).min(1.0);
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam with bias correction and a warmup + cosine learning-rate schedule.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: usize,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .ids()
                .map(|id| {
                    let [r, c] = params.get(id).shape();
                    Tensor::zeros(r, c)
                })
                .collect()
        };
        Adam {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Applies one update and returns the learning rate used.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<f64> {
        for (id, g) in grads.iter() {
            if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at entry {bad} is {} (step {})",
                    params.name(id),
                    g.data()[bad],
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = self.config.lr_at(self.step);
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (id, g) in grads.iter() {
            if !params.is_trainable(id) {
                continue;
            }
            let m = self.first[id.index()].data_mut();
            let v = self.second[id.index()].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn schedule_shape() {
        let c = AdamConfig {
            lr: 1.0,
            total_steps: 100,
            ..AdamConfig::default()
        };
        assert_eq!(c.warmup_steps(), 5);
        assert_eq!(c.lr_at(0), 0.0);
        assert!((c.lr_at(1) - 0.2).abs() < 1e-15);
        assert!((c.lr_at(5) - 1.0).abs() < 1e-15);
        assert!(c.lr_at(100).abs() < 1e-15);
        assert!(c.lr_at(50) < c.lr_at(20));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::default();
        let id = store.add("x", Tensor::row(&[1.5, -2.0]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut g = Gradients::default();
        g.insert(id, Tensor::zeros(1, 2));
        adam.step(&mut store, &g).unwrap();
        assert_eq!(store.get(id).data(), &[1.5, -2.0]);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut store = ParamStore::default();
        let id = store.add("w", Tensor::row(&[1.0]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut g = Gradients::default();
        g.insert(id, Tensor::row(&[f64::NAN]));
        let err = adam.step(&mut store, &g).unwrap_err();
        assert!(err.to_string().contains('w'));
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::default();
        let id = store.add("x", Tensor::row(&[1.0]));
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.05,
                total_steps: 500,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..500 {
            let mut t = Tape::new();
            let x = t.param(&store, id);
            let sq = t.mul(x, x).unwrap();
            let loss = t.sum(sq);
            let g = t.backward(loss).unwrap();
            adam.step(&mut store, &g).unwrap();
        }
        assert!(store.get(id).item().abs() < 1e-3, "{}", store.get(id).item());
    }
}
