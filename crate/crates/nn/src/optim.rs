//! AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule.

use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Optimizer moments, one buffer per parameter of the store it was built for.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, store: &ParamStore<T>) -> Self {
        let m: Vec<Vec<T>> = store
            .ids()
            .map(|id| vec![T::zero(); store.value(id).len()])
            .collect();
        Self {
            cfg,
            v: m.clone(),
            m,
        }
    }

    /// One update using the gradients currently held in `store`. `step` starts at 1.
    pub fn step(&mut self, store: &mut ParamStore<T>, step: u64, lr: f64) {
        assert!(step >= 1, "AdamW steps are 1-based");
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(step as i32);
        let bc2 = 1.0 - c.beta2.powi(step as i32);
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let (ob1, ob2) = (T::c(1.0 - c.beta1), T::c(1.0 - c.beta2));
        let decay = T::c(1.0 - lr * c.weight_decay);
        let step_size = T::c(lr / bc1);
        let inv_bc2 = T::c(1.0 / bc2);
        let eps = T::c(c.eps);
        for (i, (_, value, grad)) in store.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = value.data_mut();
            for (j, p) in data.iter_mut().enumerate() {
                let g = grad.get(j).copied().unwrap_or_else(T::zero);
                let (mi, vi) = (&mut m[j], &mut v[j]);
                *mi = b1 * *mi + ob1 * g;
                *vi = b2 * *vi + ob2 * g * g;
                *p = *p * decay - step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
    }
}

/// Linear warmup from `warmup_lr` to `peak_lr`, then cosine decay to `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub peak_lr: f64,
    pub warmup_lr: f64,
    pub min_lr: f64,
    pub total_steps: u64,
    pub warmup_frac: f64,
}

impl CosineSchedule {
    pub fn warmup_steps(&self) -> u64 {
        ((self.total_steps as f64) * self.warmup_frac).round() as u64
    }

    pub fn lr(&self, step: u64) -> f64 {
        let warm = self.warmup_steps();
        if step <= warm && warm > 0 {
            return self.warmup_lr + (self.peak_lr - self.warmup_lr) * step as f64 / warm as f64;
        }
        if step >= self.total_steps {
            return self.min_lr;
        }
        let progress = (step - warm) as f64 / (self.total_steps - warm).max(1) as f64;
        self.min_lr + 0.5 * (self.peak_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
