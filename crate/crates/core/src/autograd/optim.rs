//! First-order optimizers.

use super::ParamStore;
use crate::tensor::Tensor;

pub trait Optimizer {
    /// Applies one update from the gradients currently held in `store`,
    /// then clamps bounded parameters.
    fn step(&mut self, store: &mut ParamStore);
    fn lr(&self) -> f64;
    fn set_lr(&mut self, lr: f64);
}

fn clamp(store: &mut ParamStore) {
    for p in store.iter_mut() {
        if let Some(lo) = p.lower_bound {
            p.value.data_mut().iter_mut().for_each(|x| *x = x.max(lo));
        }
    }
}

fn zeros_for(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|p| p.grad.map(|_| 0.0)).collect()
}

/// `v <- mu v + g`, `theta <- theta - lr v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: Vec::new() }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore) {
        if self.velocity.len() != store.len() {
            self.velocity = zeros_for(store);
        }
        for (p, v) in store.iter_mut().zip(&mut self.velocity) {
            for ((x, g), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
                *vi = self.momentum * *vi + g;
                *x -= self.lr * *vi;
            }
        }
        clamp(store);
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.len() {
            self.m = zeros_for(store);
            self.v = zeros_for(store);
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let it = p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((x, &g), (mi, vi)) in it {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *x -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        clamp(store);
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}
