//! Adam for the student streams, momentum SGD for the FA head, and global
//! gradient-norm clipping.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update of every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &GradMap<T>) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::MissingParameter(name.clone()))?;
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let it = p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data());
            for (((p, m), v), &g) in it {
                let g = g.to_f64();
                let mn = self.beta1 * m.to_f64() + (1.0 - self.beta1) * g;
                let vn = self.beta2 * v.to_f64() + (1.0 - self.beta2) * g * g;
                *m = T::from_f64(mn);
                *v = T::from_f64(vn);
                let upd = self.lr * (mn / bc1) / (libm::sqrt(vn / bc2) + self.eps);
                *p = T::from_f64(p.to_f64() - upd);
            }
        }
        Ok(())
    }

    /// Moments as named tensors, for checkpoints.
    pub fn export(&self, prefix: &str, out: &mut ParamStore<T>) {
        for (k, t) in &self.m {
            out.insert(format!("{prefix}.m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("{prefix}.v.{k}"), t.clone());
        }
        out.insert(format!("{prefix}.t"), Tensor::scalar(T::from_f64(self.t as f64)));
    }

    pub fn import(&mut self, prefix: &str, src: &ParamStore<T>) {
        let (pm, pv) = (format!("{prefix}.m."), format!("{prefix}.v."));
        for (k, t) in src.iter() {
            if let Some(n) = k.strip_prefix(&pm) {
                self.m.insert(n.into(), t.clone());
            } else if let Some(n) = k.strip_prefix(&pv) {
                self.v.insert(n.into(), t.clone());
            }
        }
        if let Some(t) = src.get(&format!("{prefix}.t")) {
            self.t = t.item().to_f64() as u64;
        }
    }
}

/// Heavy-ball SGD: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &GradMap<T>) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::MissingParameter(name.clone()))?;
            let v = self.velocity.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for ((p, v), &g) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                let vn = self.momentum * v.to_f64() + g.to_f64();
                *v = T::from_f64(vn);
                *p = T::from_f64(p.to_f64() - self.lr * vn);
            }
        }
        Ok(())
    }

    pub fn export(&self, prefix: &str, out: &mut ParamStore<T>) {
        for (k, t) in &self.velocity {
            out.insert(format!("{prefix}.v.{k}"), t.clone());
        }
    }

    pub fn import(&mut self, prefix: &str, src: &ParamStore<T>) {
        let pv = format!("{prefix}.v.");
        for (k, t) in src.iter() {
            if let Some(n) = k.strip_prefix(&pv) {
                self.velocity.insert(n.into(), t.clone());
            }
        }
    }
}

pub fn global_norm<T: Real>(grads: &GradMap<T>) -> f64 {
    let ss: f64 = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let v = v.to_f64();
            v * v
        })
        .sum();
    libm::sqrt(ss)
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut GradMap<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64(max_norm / norm);
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}
