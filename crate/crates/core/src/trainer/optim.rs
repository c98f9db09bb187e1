//! Linear warmup/decay schedule and the AdamW optimizer.

use crate::network::{Params, TensorKind};

/// Linear warmup from 0 to `peak` over `warmup_steps`, then linear decay to
/// 0 at `total_steps`. Steps are 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn new(peak: f64, warmup_ratio: f64, total_steps: usize) -> Self {
        LinearSchedule {
            peak,
            warmup_steps: (warmup_ratio * total_steps as f64).round() as usize,
            total_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step == 0 || step >= self.total_steps {
            return 0.0;
        }
        if step <= self.warmup_steps {
            return self.peak * (step as f64 / self.warmup_steps as f64);
        }
        self.peak * ((self.total_steps - step) as f64 / (self.total_steps - self.warmup_steps) as f64)
    }
}

/// AdamW with decoupled weight decay applied to weight matrices only
/// (not biases or layer-norm gains).
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamW {
    pub fn new(num_params: usize, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut off = 0;
        for ((_, kind, p), (_, _, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            let decay = if kind == TensorKind::Weight { self.weight_decay } else { 0.0 };
            for (i, (x, gi)) in p.iter_mut().zip(g).enumerate() {
                let m = &mut self.m[off + i];
                let v = &mut self.v[off + i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                *x -= lr * (update + decay * *x);
            }
            off += p.len();
        }
    }
}

/// Rescales `grads` in place so its global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut Params, norm: f64, max_norm: f64) {
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for (_, _, t) in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
}
