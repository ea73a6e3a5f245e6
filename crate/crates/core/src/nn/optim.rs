//! Adam with global-norm gradient clipping and a warmup/cosine schedule.

use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::params::ParamStore;
use super::tensor::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Clip the global gradient norm to this value; 0 disables clipping.
    pub grad_clip: f64,
    pub warmup_steps: usize,
    /// Cosine-decay the learning rate to `lr * final_lr_frac` over this many
    /// steps; 0 keeps it constant after warmup.
    pub decay_steps: usize,
    pub final_lr_frac: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, grad_clip: 1.0, warmup_steps: 0, decay_steps: 0, final_lr_frac: 0.1 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.decay_steps == 0 {
            return self.lr;
        }
        let progress = ((step - self.warmup_steps.min(step)) as f64 / self.decay_steps as f64).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.final_lr_frac + (1.0 - self.final_lr_frac) * cosine)
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: usize,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros = |s: &ParamStore| s.ids().map(|id| Mat::zeros(s.value(id).rows(), s.value(id).cols())).collect();
        Self { m: zeros(store), v: zeros(store), cfg, step: 0 }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Applies one update and returns the pre-clipping gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> f64 {
        let norm = grads.global_norm();
        let clip = if self.cfg.grad_clip > 0.0 && norm > self.cfg.grad_clip { self.cfg.grad_clip / norm } else { 1.0 };
        let lr = self.cfg.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let (b1, b2, eps, wd) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps, self.cfg.weight_decay);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.param(id) else { continue };
            let i = id.index();
            let p = store.value_mut(id);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((pv, mv), vv), gv) in p.data_mut().iter_mut().zip(m).zip(v).zip(g.data()) {
                let gv = gv * clip;
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let update = (*mv / bc1) / ((*vv / bc2).sqrt() + eps);
                *pv -= lr * (update + wd * *pv);
            }
        }
        norm
    }
}

/// Keeps the last parameter state reached with a finite loss so a
/// diverged run can hand it back.
pub struct DivergenceGuard {
    last_good: ParamStore,
    last_step: usize,
    every: usize,
}

impl DivergenceGuard {
    pub fn new(store: &ParamStore, every: usize) -> Self {
        Self { last_good: store.clone(), last_step: 0, every: every.max(1) }
    }

    pub fn check(&mut self, step: usize, loss: f64, grads: &Gradients, store: &ParamStore) -> Result<()> {
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged {
                step,
                message: format!("non-finite loss {loss}; last finite state is from step {}", self.last_step),
                last_finite: Some(Box::new(self.last_good.clone())),
            });
        }
        if step % self.every == 0 {
            self.last_good.clone_from(store);
            self.last_step = step;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Graph;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let w = store.add("w", Mat::from_vec(1, 2, vec![3.0, -2.0]));
        let mut opt = Adam::new(&store, AdamConfig { lr: 0.1, grad_clip: 0.0, ..AdamConfig::default() });
        for _ in 0..500 {
            let grads = {
                let mut g = Graph::new(&store);
                let p = g.param(w);
                let sq = g.square(p);
                let loss = g.sum(sq);
                g.backward(loss)
            };
            opt.step(&mut store, &grads);
        }
        assert!(store.value(w).sum_sq() < 1e-4);
    }

    #[test]
    fn schedule_shape() {
        let cfg = AdamConfig { lr: 1.0, warmup_steps: 10, decay_steps: 100, final_lr_frac: 0.1, ..AdamConfig::default() };
        assert!((cfg.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((cfg.lr_at(10) - 1.0).abs() < 1e-12);
        assert!((cfg.lr_at(110) - 0.1).abs() < 1e-12);
        assert!((cfg.lr_at(5000) - 0.1).abs() < 1e-12);
    }
}
