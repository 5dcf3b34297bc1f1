//! AdamW with decoupled weight decay.

use crate::graph::ParamStore;
use ndarray::ArrayD;

pub struct AdamW {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    pub t: u64,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f32) -> Self {
        let m = store
            .ids()
            .map(|id| ArrayD::zeros(store.value(id).raw_dim()))
            .collect();
        let v = store
            .ids()
            .map(|id| ArrayD::zeros(store.value(id).raw_dim()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m,
            v,
        }
    }

    /// One update from the gradients currently held in the store.
    pub fn step(&mut self, store: &mut ParamStore, lr: f32) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let idx = id.index();
            let grad = store.grad(id).clone();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            m.zip_mut_with(&grad, |m, g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(&grad, |v, g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g
            });
            let (beta_eps, wd) = (self.eps, self.weight_decay);
            let value = store.value_mut(id);
            ndarray::Zip::from(&mut *value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, m, v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= lr * (mhat / (vhat.sqrt() + beta_eps) + wd * *p);
                });
        }
    }

    pub fn moments(&self) -> (&[ArrayD<f32>], &[ArrayD<f32>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<ArrayD<f32>>, v: Vec<ArrayD<f32>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
