//! SGD with momentum and weight decay, and the half-period cosine schedule.

use std::collections::BTreeMap;

use crate::nn::Param;
use crate::tensor::Real;

/// `lr0 · ½ · (1 + cos(π · step / total_steps))`.
pub fn cosine_lr(step: u64, total_steps: u64, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let progress = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Momentum buffers keyed by parameter path.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<R> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: BTreeMap<String, Vec<R>>,
}

impl<R: Real> Sgd<R> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`; decay only where `param.decay`.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param<R>>, lr: f64) {
        let mu = R::of(self.momentum);
        let wd = R::of(self.weight_decay);
        let lr = R::of(lr);
        for p in params {
            let v = self
                .velocity
                .entry(p.name.clone())
                .or_insert_with(|| vec![R::zero(); p.value.len()]);
            for ((w, g), vel) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                let mut d = *g;
                if p.decay {
                    d += wd * *w;
                }
                *vel = mu * *vel + d;
                *w -= lr * *vel;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert!((cosine_lr(0, 1000, 0.03) - 0.03).abs() < 1e-12);
        assert!(cosine_lr(1000, 1000, 0.03).abs() < 1e-12);
        assert!((cosine_lr(500, 1000, 0.03) - 0.015).abs() < 1e-12);
        let mut last = f64::INFINITY;
        for s in 0..=100 {
            let lr = cosine_lr(s, 100, 0.03);
            assert!(lr <= last);
            last = lr;
        }
    }

    #[test]
    fn sgd_momentum_and_decay() {
        let mut p = Param::<f64>::new("w", &[1], vec![1.0], true);
        p.grad = vec![0.5];
        let mut q = Param::<f64>::new("bn.gamma", &[1], vec![1.0], false);
        q.grad = vec![0.5];
        let mut opt = Sgd::new(0.9, 0.1);
        opt.step([&mut p, &mut q], 0.1);
        assert!((p.value[0] - (1.0 - 0.1 * 0.6)).abs() < 1e-15);
        assert!((q.value[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        opt.step([&mut p, &mut q], 0.1);
        let v2 = 0.9 * 0.6 + (0.5 + 0.1 * 0.94);
        assert!((p.value[0] - (0.94 - 0.1 * v2)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut p = Param::<f32>::new("w", &[2], vec![1.0, -2.0], true);
        p.grad = vec![0.3, 0.7];
        let before = p.value.clone();
        let mut opt = Sgd::new(0.9, 1e-4);
        opt.step([&mut p], 0.0);
        opt.step([&mut p], 0.0);
        assert_eq!(p.value, before);
    }
}
