//! Named parameter storage, AdamW and a warm-up + cosine learning-rate schedule.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::numerics::{Gradients, Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered table of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replaces every value from `(name, tensor)` pairs; names and shapes
    /// must match the existing table exactly.
    pub fn load<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, Tensor)>) -> Result<()> {
        let mut seen = alloc::vec![false; self.len()];
        for (name, t) in entries {
            let id = self
                .find(name)
                .ok_or_else(|| Error::Data(format!("unknown parameter {name}")))?;
            if t.shape() != self.values[id.0].shape() {
                return Err(Error::Data(format!(
                    "parameter {name}: shape {:?}, expected {:?}",
                    t.shape(),
                    self.values[id.0].shape()
                )));
            }
            self.values[id.0] = t;
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("parameter {} missing", self.names[i])));
        }
        Ok(())
    }

    /// Adds every parameter to `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| g.param(t.clone())).collect(),
        }
    }

    /// Adds every parameter to `g` as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| g.constant(t.clone())).collect(),
        }
    }
}

/// Graph handles of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps existing graph leaves, in parameter order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients in parameter order.
    pub fn gradients(&self, grads: &mut Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|v| grads.take(*v)).collect()
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 2e-5,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = || params.values.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::dim(
                "adamw",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = &mut params.values[i];
            if g.shape() != p.shape() {
                return Err(Error::dim("adamw", format!("gradient shape for {}", params.names[i])));
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + c.eps);
                *w -= lr * (update + c.weight_decay * *w);
            }
        }
        Ok(())
    }
}

/// Linear warm-up to `peak`, then cosine decay to `floor` at `total` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub peak: f64,
    pub floor: f64,
    pub warmup: u64,
    pub total: u64,
}

impl CosineSchedule {
    /// Learning rate for the 0-based optimizer step `step`.
    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1);
        let progress = ((step - self.warmup) as f64 / span as f64).min(1.0);
        self.floor + 0.5 * (self.peak - self.floor) * (1.0 + (core::f64::consts::PI * progress).cos())
    }
}

impl core::fmt::Display for AdamWConfig {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "betas=({}, {}) eps={} weight_decay={}",
            self.beta1, self.beta2, self.eps, self.weight_decay
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(alloc::vec![1.0, -2.0]));
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg, &store);
        opt.update(&mut store, &[Tensor::vector(alloc::vec![0.5, -3.0])], 0.1).unwrap();
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(alloc::vec![2.0]));
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.5, ..AdamWConfig::default() }, &store);
        opt.update(&mut store, &[Tensor::vector(alloc::vec![0.0])], 0.1).unwrap();
        assert!((store.get(id).data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(alloc::vec![3.0, -4.0, 0.5]));
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        for _ in 0..2000 {
            let g: Tensor = store.get(id).map(|x| 2.0 * (x - 1.0));
            opt.update(&mut store, &[g], 0.01).unwrap();
        }
        assert!(store.get(id).data().iter().all(|x| (x - 1.0).abs() < 1e-2));
    }

    #[test]
    fn schedule_shape() {
        let s = CosineSchedule { peak: 1e-4, floor: 0.0, warmup: 10, total: 110 };
        assert!((s.lr(0) - 1e-5).abs() < 1e-18);
        assert!((s.lr(9) - 1e-4).abs() < 1e-18);
        assert!((s.lr(60) - 5e-5).abs() < 1e-12);
        assert!(s.lr(110).abs() < 1e-18);
        assert!((1..200).all(|k| k < 10 || s.lr(k) <= s.lr(k - 1)));
    }

    #[test]
    fn store_load_validates() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(&[2]));
        store.add("b", Tensor::zeros(&[1, 3]));
        let mut other = store.clone();
        other.load([("a", Tensor::full(&[2], 1.0)), ("b", Tensor::full(&[1, 3], 2.0))]).unwrap();
        assert_eq!(other.get(store.find("b").unwrap()).data(), &[2.0; 3]);
        assert!(store.clone().load([("a", Tensor::zeros(&[3]))]).is_err());
        assert!(store.clone().load([("a", Tensor::zeros(&[2]))]).is_err());
        assert!(store.clone().load([("zz", Tensor::zeros(&[2]))]).is_err());
        assert_eq!(store.scalar_count(), 5);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = alloc::vec![Tensor::vector(alloc::vec![3.0]), Tensor::vector(alloc::vec![4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
    }
}
