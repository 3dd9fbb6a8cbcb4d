//! Adam with bias correction and decoupled weight decay.

use super::layers::{Module, Param};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 3e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over `params` using their accumulated gradients.
    ///
    /// The parameter list must be the same (same order and shapes) on every call.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        for (k, p) in params.iter_mut().enumerate() {
            self.update(k, p);
        }
    }

    /// Same as [`Adam::step`] over every parameter of `module`, in visiting order.
    pub fn step_module<M: Module + ?Sized>(&mut self, module: &mut M) {
        if self.first.is_empty() {
            module.visit("", &mut |_, p| self.first.push(Tensor::zeros(p.value.shape())));
            self.second = self.first.clone();
        }
        self.step += 1;
        let mut k = 0;
        module.visit_mut("", &mut |_, p| {
            self.update(k, p);
            k += 1;
        });
        assert_eq!(k, self.first.len(), "parameter list changed between steps");
    }

    fn update(&mut self, k: usize, p: &mut Param) {
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let m = self.first[k].data_mut();
        let v = self.second[k].data_mut();
        let g = p.grad.data();
        let w = p.value.data_mut();
        for i in 0..w.len() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * w[i]);
        }
    }
}

/// Functional form: one Adam step on a single parameter.
pub fn adam_step(state: &mut Adam, param: &mut Param) {
    state.step(&mut [param]);
}
