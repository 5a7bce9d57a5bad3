//! Named parameter storage, AdamW, and the JSON checkpoint format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tape::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Param {
    value: Tensor,
    m: Tensor,
    v: Tensor,
    step: u64,
}

/// Learnable tensors plus their AdamW moments and per-parameter step counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a fresh parameter with zeroed optimizer state.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("parameter insert".into()));
        }
        let zeros = Tensor::zeros(value.shape());
        self.params.insert(
            name.into(),
            Param {
                m: zeros.clone(),
                v: zeros,
                value,
                step: 0,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    /// Overwrites a value in place. Optimizer state is kept.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if !p.value.same_shape(&value) {
            return Err(Error::Shape(format!(
                "set `{name}`: {:?} vs {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn step_count(&self, name: &str) -> Option<u64> {
        self.params.get(name).map(|p| p.step)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter().map(|(k, p)| (k, &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Copies values into a fresh store with reset optimizer state.
    pub fn fresh_copy(&self) -> Self {
        let mut out = Self::new();
        for (k, p) in &self.params {
            out.insert(k.clone(), p.value.clone())
                .expect("stored values are finite");
        }
        out
    }

    /// Union of two stores with disjoint names (fresh optimizer state).
    pub fn merged(&self, other: &ParamStore) -> Result<Self> {
        let mut out = self.fresh_copy();
        for (k, p) in &other.params {
            if out.params.contains_key(k) {
                return Err(Error::Config(format!("parameter `{k}` present in both stores")));
            }
            out.insert(k.clone(), p.value.clone())?;
        }
        Ok(out)
    }

    /// `true` when both stores hold the same names with the same shapes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, a), (kb, b))| ka == kb && a.value.same_shape(&b.value))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.iter().map(|(k, p)| (k.clone(), p.value.clone())).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut store = Self::new();
        for (k, t) in &ckpt.params {
            store.insert(k.clone(), t.clone())?;
        }
        Ok(store)
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (k, p) in &self.params {
            h.update(k.as_bytes());
            h.update([0u8]);
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Serializable parameter values: name → tensor (shape + row-major data).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        for (k, t) in &ckpt.params {
            let expected: usize = t.shape().iter().product();
            if expected != t.len() {
                return Err(Error::Shape(format!("checkpoint entry `{k}`")));
            }
        }
        Ok(ckpt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.learning_rate.is_finite()
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("bad optimizer settings {self:?}")))
        }
    }
}

/// One decoupled-weight-decay Adam update for every parameter named in `grads`.
///
/// Parameters absent from `grads` are left untouched, including their step
/// counts. Every gradient must name a stored parameter of the same shape.
pub fn adamw_step(store: &mut ParamStore, grads: &Gradients, cfg: &OptimConfig) -> Result<()> {
    cfg.validate()?;
    for (name, g) in grads.iter() {
        let p = store
            .params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.clone()))?;
        if !p.value.same_shape(g) {
            return Err(Error::Shape(format!(
                "gradient for `{name}`: {:?} vs parameter {:?}",
                g.shape(),
                p.value.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient for `{name}`")));
        }
    }
    for (name, g) in grads.iter() {
        let p = store.params.get_mut(name).expect("checked above");
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
        let values = p.value.data_mut();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for i in 0..values.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] = values[i] * decay - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(values.to_vec())).unwrap();
        s
    }

    fn grads_of(values: &[f64]) -> Gradients {
        let mut g = Gradients::new();
        g.insert("w", Tensor::vector(values.to_vec()));
        g
    }

    #[test]
    fn zero_grad_without_decay_is_fixed_point() {
        let mut s = store_with(&[0.3, -1.2, 4.0]);
        let cfg = OptimConfig {
            weight_decay: 0.0,
            learning_rate: 0.1,
            ..OptimConfig::default()
        };
        adamw_step(&mut s, &grads_of(&[0.0; 3]), &cfg).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[0.3, -1.2, 4.0]);
        assert_eq!(s.step_count("w"), Some(1));
    }

    #[test]
    fn zero_grad_with_decay_scales() {
        let mut s = store_with(&[0.3, -1.2, 4.0]);
        let cfg = OptimConfig {
            weight_decay: 0.5,
            learning_rate: 0.1,
            ..OptimConfig::default()
        };
        adamw_step(&mut s, &grads_of(&[0.0; 3]), &cfg).unwrap();
        let f = 1.0 - 0.1 * 0.5;
        for (a, b) in s.get("w").unwrap().data().iter().zip([0.3, -1.2, 4.0]) {
            assert_eq!(*a, b * f);
        }
    }

    #[test]
    fn scalar_trajectory_matches_reference_loop() {
        // Straight-line reimplementation of the update rule.
        let (lr, b1, b2, eps, wd, g) = (0.05, 0.9, 0.999, 1e-8, 0.01, 0.7);
        let mut w = 2.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=3 {
            w -= lr * wd * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
            expected.push(w);
        }

        let mut s = store_with(&[2.0]);
        let cfg = OptimConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
            weight_decay: wd,
        };
        for e in expected {
            adamw_step(&mut s, &grads_of(&[g]), &cfg).unwrap();
            let got = s.get("w").unwrap().data()[0];
            assert!((got - e).abs() < 1e-14, "{got} vs {e}");
        }
    }

    #[test]
    fn shape_mismatch_and_unknown_name_error() {
        let mut s = store_with(&[1.0, 2.0]);
        let cfg = OptimConfig::default();
        assert!(matches!(
            adamw_step(&mut s, &grads_of(&[1.0]), &cfg),
            Err(Error::Shape(_))
        ));
        let mut g = Gradients::new();
        g.insert("nope", Tensor::vector(vec![1.0]));
        assert!(matches!(adamw_step(&mut s, &g, &cfg), Err(Error::UnknownParam(_))));
        // Nothing was applied.
        assert_eq!(s.step_count("w"), Some(0));
    }

    #[test]
    fn invalid_config_rejected() {
        let mut s = store_with(&[1.0]);
        for cfg in [
            OptimConfig {
                beta1: 1.0,
                ..OptimConfig::default()
            },
            OptimConfig {
                beta2: 0.0,
                ..OptimConfig::default()
            },
            OptimConfig {
                eps: 0.0,
                ..OptimConfig::default()
            },
            OptimConfig {
                learning_rate: 0.0,
                ..OptimConfig::default()
            },
        ] {
            assert!(adamw_step(&mut s, &grads_of(&[1.0]), &cfg).is_err());
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut s = ParamStore::new();
        s.insert(
            "a",
            Tensor::new(vec![2, 2], vec![0.1, 1.0 / 3.0, -2.5e-300, 1e300]).unwrap(),
        )
        .unwrap();
        s.insert("b", Tensor::vector(vec![std::f64::consts::PI])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        s.to_checkpoint().save(&path).unwrap();
        let back = ParamStore::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(back.checksum(), s.checksum());
        for ((_, a), (_, b)) in back.iter().zip(s.iter()) {
            let bits_a: Vec<u64> = a.data().iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }
}
