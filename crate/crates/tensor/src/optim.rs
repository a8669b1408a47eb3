//! Adam with optional decoupled weight decay, plus a cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::{ParamMap, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Decoupled (AdamW) weight decay; 0 gives plain Adam.
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

pub struct Adam {
    params: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub config: AdamConfig,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, config: AdamConfig) -> Self {
        let m = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        let v = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        Self { params, m, v, step: 0, config }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// Apply one update with the configured learning rate.
    pub fn step(&mut self) {
        let lr = self.config.lr;
        self.step_with_lr(lr);
    }

    pub fn step_with_lr(&mut self, lr: f32) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - (c.beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (c.beta2 as f64).powi(self.step as i32);
        let step_size = (lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for (i, (_, p)) in self.params.iter().enumerate() {
            let Some(g) = p.take_grad() else { continue };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            p.update_value(|w| {
                for (j, wj) in w.data_mut().iter_mut().enumerate() {
                    let gj = g.data()[j];
                    m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                    v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                    if c.weight_decay > 0.0 {
                        *wj -= lr * c.weight_decay * *wj;
                    }
                    *wj -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + c.eps);
                }
            });
        }
    }

    /// Moments and step counter for exact resumption.
    pub fn state(&self) -> ParamMap {
        let mut out = ParamMap::new();
        for (i, (name, _)) in self.params.iter().enumerate() {
            out.insert(format!("adam.m.{name}"), self.m[i].clone());
            out.insert(format!("adam.v.{name}"), self.v[i].clone());
        }
        out.insert("adam.step".into(), Tensor::scalar(self.step as f32));
        out
    }

    pub fn load_state(&mut self, state: &ParamMap) {
        for (i, (name, _)) in self.params.iter().enumerate() {
            if let Some(m) = state.get(&format!("adam.m.{name}")) {
                self.m[i] = m.clone();
            }
            if let Some(v) = state.get(&format!("adam.v.{name}")) {
                self.v[i] = v.clone();
            }
        }
        if let Some(s) = state.get("adam.step") {
            self.step = s.item() as u64;
        }
    }
}

/// Cosine annealing from `max_lr` at step 0 down to `min_lr` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, min_lr: f32, max_lr: f32) -> f32 {
    if total_steps <= 1 {
        return max_lr;
    }
    let t = (step.min(total_steps - 1)) as f64 / (total_steps - 1) as f64;
    (min_lr as f64 + 0.5 * (max_lr - min_lr) as f64 * (1.0 + (PI * t).cos())) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-5, 2.5e-4), 2.5e-4);
        assert!((cosine_lr(99, 100, 1e-5, 2.5e-4) - 1e-5).abs() < 1e-10);
        let mid = cosine_lr(50, 101, 0.0, 1.0);
        assert!((mid - 0.5).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let x = Var::param(Tensor::new(vec![2], vec![3.0, -2.0]));
        let mut opt = Adam::new(vec![("x".into(), x.clone())], AdamConfig { lr: 0.1, ..Default::default() });
        for _ in 0..300 {
            let loss = x.square().sum_all();
            crate::backward(&loss);
            opt.step();
        }
        assert!(x.value().max_abs() < 1e-2);
    }
}
