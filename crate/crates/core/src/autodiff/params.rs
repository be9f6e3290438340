use std::collections::BTreeMap;

use crate::error::{ensure_param, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Persistent state such as running statistics; never receives gradients.
    Buffer,
}

#[derive(Clone, Debug)]
struct Entry {
    value: Tensor,
    kind: ParamKind,
    first_moment: Tensor,
    second_moment: Tensor,
}

/// Named parameters plus Adam optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert_kind(&mut self, name: &str, value: Tensor, kind: ParamKind) -> Result<()> {
        ensure_param!(!self.entries.contains_key(name), "duplicate parameter name '{name}'");
        let (r, c) = value.shape();
        self.entries.insert(
            name.to_string(),
            Entry {
                value,
                kind,
                first_moment: Tensor::zeros(r, c),
                second_moment: Tensor::zeros(r, c),
            },
        );
        Ok(())
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert_kind(name, value, ParamKind::Trainable)
    }

    pub fn insert_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert_kind(name, value, ParamKind::Buffer)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::param(format!("unknown parameter '{name}'")))
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.entries.get(name).map(|e| e.kind)
    }

    /// Overwrites a value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::param(format!("unknown parameter '{name}'")))?;
        ensure_param!(
            e.value.shape() == value.shape(),
            "parameter '{name}' shape {:?} cannot change to {:?}",
            e.value.shape(),
            value.shape()
        );
        e.value = value;
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name).map(|e| e.value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, ParamKind)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value, e.kind))
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Clears moments and the step counter, keeping values.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for e in self.entries.values_mut() {
            let (r, c) = e.value.shape();
            e.first_moment = Tensor::zeros(r, c);
            e.second_moment = Tensor::zeros(r, c);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Parameters absent from `grads` are left alone.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let e = store
            .entries
            .get(name)
            .ok_or_else(|| Error::param(format!("gradient for unknown parameter '{name}'")))?;
        ensure_param!(
            e.value.shape() == g.shape(),
            "gradient for '{name}' has shape {:?}, parameter is {:?}",
            g.shape(),
            e.value.shape()
        );
        ensure_param!(e.kind == ParamKind::Trainable, "'{name}' is a buffer, not trainable");
    }
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let e = store.entries.get_mut(name).expect("checked above");
        let Entry {
            value,
            first_moment,
            second_moment,
            ..
        } = e;
        for (((p, m), v), &gv) in value
            .data_mut()
            .iter_mut()
            .zip(first_moment.data_mut())
            .zip(second_moment.data_mut())
            .zip(g.data())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gv;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::filled(1, 1, v)).unwrap();
        s
    }

    fn grad(name: &str, g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), Tensor::filled(1, 1, g))])
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = one("w", 0.7);
        adam_step(&mut s, &grad("w", 0.0), 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(s.get("w").unwrap()[(0, 0)], 0.7);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut s = one("w", 0.0);
        let lr = 0.01;
        let mut prev = 0.0;
        for _ in 0..2000 {
            adam_step(&mut s, &grad("w", 3.5), lr, &AdamConfig::default()).unwrap();
            let now = s.get("w").unwrap()[(0, 0)];
            assert!(((prev - now) - lr).abs() < 1e-6);
            prev = now;
        }
    }

    #[test]
    fn three_steps_by_hand() {
        let cfg = AdamConfig::default();
        let mut s = one("w", 1.0);
        let gs = [0.5, -0.2, 0.1];
        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in gs.iter().enumerate() {
            adam_step(&mut s, &grad("w", *g), 0.05, &cfg).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            p -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert!((s.get("w").unwrap()[(0, 0)] - p).abs() <= 1e-12);
        }
        assert_eq!(s.step(), 3);
        s.reset_optimizer();
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn store_errors() {
        let mut s = one("w", 1.0);
        assert!(s.insert("w", Tensor::zeros(1, 1)).is_err());
        assert!(s.set("w", Tensor::zeros(2, 1)).is_err());
        assert!(s.get("nope").is_err());
        let bad = BTreeMap::from([("w".to_string(), Tensor::zeros(2, 2))]);
        assert!(adam_step(&mut s, &bad, 0.1, &AdamConfig::default()).is_err());
        assert!(adam_step(&mut s, &grad("x", 1.0), 0.1, &AdamConfig::default()).is_err());
        s.insert_buffer("b", Tensor::zeros(1, 1)).unwrap();
        assert!(adam_step(&mut s, &grad("b", 1.0), 0.1, &AdamConfig::default()).is_err());
    }
}
