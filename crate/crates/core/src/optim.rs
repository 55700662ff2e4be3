//! Adam over the trainable entries of a [`ParamStore`].

use pipgan_autograd::Gradients;
use serde::{Deserialize, Serialize};

use crate::checkpoint::NamedTensor;
use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let ids = store.trainable_ids();
        let zeros: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; store.get(id).numel()]).collect();
        Adam { cfg, step: 0, ids, m: zeros.clone(), v: zeros }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable entry. Entries without a gradient are
    /// treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, eps } = self.cfg;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, &id) in self.ids.iter().enumerate() {
            let p = store.get(id);
            let g = grads.get(p).map(|g| g.to_vec());
            let mut values = p.to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..values.len() {
                let gj = g.as_ref().map_or(0.0, |g| g[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                values[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
            store.set(id, values);
        }
    }

    /// Moment tensors named `{param}.m` / `{param}.v`, plus the step count.
    pub fn export(&self, store: &ParamStore) -> Vec<NamedTensor> {
        let mut out = vec![("step".to_string(), vec![], vec![self.step as f64])];
        for (i, &id) in self.ids.iter().enumerate() {
            let shape = store.get(id).shape().to_vec();
            out.push((format!("{}.m", store.name(id)), shape.clone(), self.m[i].clone()));
            out.push((format!("{}.v", store.name(id)), shape, self.v[i].clone()));
        }
        out
    }

    pub fn import(&mut self, store: &ParamStore, tensors: &[NamedTensor]) -> Result<()> {
        let find = |name: &str, len: usize| -> Result<Vec<f64>> {
            let (_, _, d) = tensors
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::SchemaMismatch(format!("optimizer state has no `{name}`")))?;
            if d.len() != len {
                return Err(Error::SchemaMismatch(format!("optimizer state `{name}` has {} values, expected {len}", d.len())));
            }
            Ok(d.clone())
        };
        self.step = find("step", 1)?[0] as u64;
        for (i, &id) in self.ids.iter().enumerate() {
            let n = store.get(id).numel();
            self.m[i] = find(&format!("{}.m", store.name(id)), n)?;
            self.v[i] = find(&format!("{}.v", store.name(id)), n)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.param("w", vec![1.0, -1.0, 0.5], &[3]);
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &store);
        let loss = store.get(id).mul(&pipgan_autograd::Tensor::from_vec(vec![2.0, -3.0, 0.0], &[3])).sum_all();
        opt.step(&mut store, &loss.backward());
        let w = store.get(id).to_vec();
        // bias-corrected first step is lr·sign(g) (up to eps)
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.param("w", vec![3.0, -2.0], &[2]);
        let buf = store.buffer("b", vec![7.0], &[1]);
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.05, beta1: 0.9, ..Default::default() }, &store);
        for _ in 0..2000 {
            let g = store.get(id).square().sum_all().backward();
            opt.step(&mut store, &g);
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
        assert_eq!(store.get(buf).data(), &[7.0]);
    }

    #[test]
    fn state_roundtrip() {
        let mut store = ParamStore::new();
        let id = store.param("w", vec![1.0, 2.0], &[2]);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        let g = store.get(id).square().sum_all().backward();
        opt.step(&mut store, &g);
        let saved = opt.export(&store);
        let mut other = Adam::new(AdamConfig::default(), &store);
        other.import(&store, &saved).unwrap();
        assert_eq!(other.export(&store), saved);
        assert!(other.import(&store, &saved[..1]).is_err());
    }
}
