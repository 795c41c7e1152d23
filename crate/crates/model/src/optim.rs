//! AdamW with decoupled weight decay and global-norm clipping.

use crate::config::OptimizerConfig;
use crate::float::Float;
use crate::params::{Grads, ParamStore};

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: OptimizerConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

/// What one optimizer update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

impl<T: Float> AdamW<T> {
    pub fn new(config: OptimizerConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.params().iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn matches(&self, store: &ParamStore<T>) -> bool {
        self.m.len() == store.params().len()
            && self.m.iter().zip(store.params()).all(|(m, p)| m.len() == p.value.len())
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &mut Grads<T>) -> StepInfo {
        self.step += 1;
        let cfg = &self.config;
        let lr = cfg.lr_at(self.step);
        let grad_norm = grads.global_norm();
        let clipped = grad_norm > cfg.clip_norm;
        if clipped {
            grads.scale(T::lit(cfg.clip_norm / grad_norm));
        }
        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let bc1 = T::lit(1.0 - cfg.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - cfg.beta2.powi(self.step as i32));
        let eps = T::lit(cfg.eps);
        let lr_t = T::lit(lr);
        let decay = T::lit(lr * cfg.weight_decay);
        let one = T::one();
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let decays = p.decays();
            let g = &grads.tensors()[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.value.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let w = &mut p.value[j];
                if decays {
                    *w -= decay * *w;
                }
                *w -= lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        StepInfo { lr, grad_norm, clipped }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::transformer::Seq2Seq;

    #[test]
    fn zero_gradients_without_decay_leave_parameters_unchanged() {
        let mut model = Seq2Seq::<f32>::new(ModelConfig::verification(), 10, 1).unwrap();
        let before: Vec<Vec<f32>> = model.store().params().iter().map(|p| p.value.clone()).collect();
        let cfg = OptimizerConfig { weight_decay: 0.0, warmup_steps: 0, total_steps: 10, ..Default::default() };
        let mut opt = AdamW::new(cfg, model.store());
        let mut grads = model.store().zeros_like();
        opt.update(model.store_mut(), &mut grads);
        let after: Vec<Vec<f32>> = model.store().params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let model = Seq2Seq::<f64>::new(ModelConfig::verification(), 10, 1).unwrap();
        let mut store = model.store().clone();
        let mut grads = store.zeros_like();
        for t in grads.g.iter_mut() {
            t.iter_mut().for_each(|v| *v = 1.0);
        }
        let cfg = OptimizerConfig { clip_norm: 0.5, warmup_steps: 0, total_steps: 10, ..Default::default() };
        let mut opt = AdamW::new(cfg, &store);
        let info = opt.update(&mut store, &mut grads);
        assert!(info.clipped);
        assert!((grads.global_norm() - 0.5).abs() < 1e-9);
    }
}
