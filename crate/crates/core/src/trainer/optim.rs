use crate::autograd::{Grads, Var};
use crate::net::ParamSet;
use crate::tensor::Mat;

/// Inverse square-root schedule with linear warm-up; `step` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup: usize,
}

impl Schedule {
    pub fn lr(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        if self.warmup == 0 {
            return self.base_lr;
        }
        let w = self.warmup as f64;
        self.base_lr * (s / w).min((w / s).sqrt())
    }
}

/// Adam with the usual transformer betas.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl Adam {
    pub fn new(set: &ParamSet) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            m: set.zeros_like(),
            v: set.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, set: &mut ParamSet, grads: &[Mat], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in set.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                *w -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Mat], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Mat::sq_norm).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

/// Adds the gradients of bound parameters into `acc`.
pub(crate) fn accumulate(acc: &mut [Mat], grads: &Grads, vars: &[Var]) {
    for (a, v) in acc.iter_mut().zip(vars) {
        if let Some(g) = grads.get(*v) {
            a.add_assign(g);
        }
    }
}
