//! AdamW with decoupled weight decay, a linear learning-rate decay schedule
//! and global-norm gradient clipping.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
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
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(alloc::format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// `lr(s) = base · (1 − s/T)`, reaching zero at step `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDecay {
    pub base_lr: f64,
    pub total_steps: u64,
}

impl LinearDecay {
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.total_steps == 0 || step >= self.total_steps {
            return 0.0;
        }
        self.base_lr * (1.0 - step as f64 / self.total_steps as f64)
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
    no_decay: BTreeSet<ParamId>,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros = |s: &ParamStore| s.values().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            config,
            first: zeros(store),
            second: zeros(store),
            step: 0,
            no_decay: BTreeSet::new(),
        }
    }

    /// Excludes a parameter from weight decay.
    pub fn exempt_from_decay(&mut self, id: ParamId) {
        self.no_decay.insert(id);
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    /// One update at learning rate `lr`. Parameters with no gradient are left
    /// untouched, including their decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let id = ParamId(i);
            let decay = if self.no_decay.contains(&id) {
                0.0
            } else {
                c.weight_decay
            };
            let theta = store.get_mut(id).data_mut();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((p, gv), mv), vv) in theta.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *p -= lr * (mhat / (libm::sqrt(vhat) + c.eps) + decay * *p);
            }
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let total: f64 = grads
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum();
    let norm = libm::sqrt(total);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.scale_inplace(k);
        }
    }
    norm
}
