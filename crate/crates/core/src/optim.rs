//! Adam with bias correction, keyed by parameter name.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Module, StateKind};
use crate::tensor::{Float, Gradients, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.0, beta2: 0.9, eps: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Moment buffers shaped like their parameters, plus the step counter.
#[derive(Debug, Clone)]
pub struct Adam<T: Float> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam { config, t: 0, m: BTreeMap::new(), v: BTreeMap::new() })
    }

    /// One update of every parameter of `module` that has a gradient in
    /// `grads`. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, module: &mut dyn Module<T>, grads: &Gradients<T>) -> Result<()> {
        let mut work: Vec<(String, Vec<T>)> = Vec::new();
        let mut bad = None;
        module.visit_state("", &mut |name, kind, p| {
            if kind != StateKind::Param {
                return;
            }
            if let Some(g) = grads.get(p) {
                if bad.is_none() && g.iter().any(|v| !v.as_f64().is_finite()) {
                    bad = Some(name.to_string());
                }
                work.push((name.to_string(), g.to_vec()));
            }
        });
        if let Some(name) = bad {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let mut updates: BTreeMap<String, Vec<T>> = BTreeMap::new();
        for (name, g) in work {
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
            let mut delta = Vec::with_capacity(g.len());
            for ((mi, vi), gi) in m.iter_mut().zip(v.iter_mut()).zip(&g) {
                let gi = gi.as_f64();
                let mn = beta1 * mi.as_f64() + (1.0 - beta1) * gi;
                let vn = beta2 * vi.as_f64() + (1.0 - beta2) * gi * gi;
                *mi = T::lit(mn);
                *vi = T::lit(vn);
                delta.push(lr * (mn / c1) / ((vn / c2).sqrt() + eps));
            }
            updates.insert(name, delta.into_iter().map(T::lit).collect());
        }
        module.visit_state("", &mut |name, kind, p| {
            if kind != StateKind::Param {
                return;
            }
            if let Some(d) = updates.get(name) {
                let data = p.data().iter().zip(d).map(|(&x, &dx)| x - dx).collect();
                *p = Tensor::parameter(p.shape(), data).expect("shape preserved");
            }
        });
        Ok(())
    }
}
