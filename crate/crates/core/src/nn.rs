//! Parameter storage and the layer types the networks are built from.

use pipgan_autograd::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Named tensors owned by one network. Trainable entries are gradient leaves;
/// buffers (batch-norm running statistics) are plain constants.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: String, data: Vec<f64>, shape: &[usize], trainable: bool) -> ParamId {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        let value = if trainable { Tensor::var(data, shape) } else { Tensor::from_vec(data, shape) };
        self.entries.push(Entry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn param(&mut self, name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> ParamId {
        self.push(name.into(), data, shape, true)
    }

    pub fn buffer(&mut self, name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> ParamId {
        self.push(name.into(), data, shape, false)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    /// Replaces the value behind `id`, keeping its shape and role.
    pub fn set(&mut self, id: ParamId, data: Vec<f64>) {
        let e = &mut self.entries[id.0];
        let shape = e.value.shape().to_vec();
        e.value = if e.trainable { Tensor::var(data, &shape) } else { Tensor::from_vec(data, &shape) };
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.entries[id.0].trainable).collect()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// `(name, shape, values)` for every entry, in registration order.
    pub fn export(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.shape().to_vec(), e.value.to_vec())).collect()
    }

    /// Loads values by name. Every entry must be present with the same shape.
    pub fn import(&mut self, prefix: &str, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        for i in 0..self.entries.len() {
            let want = format!("{prefix}{}", self.entries[i].name);
            let (_, shape, data) = tensors
                .iter()
                .find(|(n, _, _)| *n == want)
                .ok_or_else(|| Error::SchemaMismatch(format!("archive has no tensor `{want}`")))?;
            if shape.as_slice() != self.entries[i].value.shape() {
                return Err(Error::SchemaMismatch(format!(
                    "tensor `{want}` has shape {shape:?}, model expects {:?}",
                    self.entries[i].value.shape()
                )));
            }
            self.set(ParamId(i), data.clone());
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and exact bit patterns of every entry.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for d in e.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in e.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub(crate) fn normal(rng: &mut ChaCha8Rng, n: usize, mean: f64, std: f64) -> Vec<f64> {
    let d = Normal::new(mean, std).expect("finite std");
    (0..n).map(|_| d.sample(rng)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.param(format!("{name}.weight"), normal(rng, cout * cin * k * k, 0.0, std), &[cout, cin, k, k]);
        let bias = bias.then(|| store.param(format!("{name}.bias"), vec![0.0; cout], &[cout]));
        Conv2d { weight, bias, stride, pad }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let y = x.conv2d(store.get(self.weight), self.stride, self.pad);
        match self.bias {
            Some(b) => {
                let b = store.get(b);
                y.add(&b.reshape(&[1, b.numel(), 1, 1]))
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.param(format!("{name}.weight"), normal(rng, cin * cout * k * k, 0.0, std), &[cin, cout, k, k]);
        let bias = bias.then(|| store.param(format!("{name}.bias"), vec![0.0; cout], &[cout]));
        ConvTranspose2d { weight, bias, stride, pad }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let y = x.conv_transpose2d(store.get(self.weight), self.stride, self.pad);
        match self.bias {
            Some(b) => {
                let b = store.get(b);
                y.add(&b.reshape(&[1, b.numel(), 1, 1]))
            }
            None => y,
        }
    }
}

/// `[N, in] → [N, out]`, weight stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.param(format!("{name}.weight"), normal(rng, fan_in * fan_out, 0.0, std), &[fan_in, fan_out]);
        let bias = store.param(format!("{name}.bias"), vec![0.0; fan_out], &[fan_out]);
        Linear { weight, bias }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        x.matmul(store.get(self.weight)).add(store.get(self.bias))
    }
}

/// Running-statistics update produced by a training-mode batch-norm pass.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        BatchNorm2d {
            gamma: store.param(format!("{name}.gamma"), normal(rng, channels, 1.0, 0.02), &[channels]),
            beta: store.param(format!("{name}.beta"), vec![0.0; channels], &[channels]),
            running_mean: store.buffer(format!("{name}.running_mean"), vec![0.0; channels], &[channels]),
            running_var: store.buffer(format!("{name}.running_var"), vec![1.0; channels], &[channels]),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, mode: Mode, updates: &mut Vec<BnUpdate>) -> Tensor {
        let c = self.channels;
        let cshape = [1, c, 1, 1];
        let xn = match mode {
            Mode::Train => {
                let count = (x.numel() / c) as f64;
                let mean = x.sum_to(&cshape).mul_scalar(1.0 / count);
                let centered = x.sub(&mean);
                let var = centered.square().sum_to(&cshape).mul_scalar(1.0 / count);
                let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                updates.push(BnUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    mean: mean.to_vec(),
                    var: var.data().iter().map(|v| v * unbiased).collect(),
                });
                centered.div(&var.add_scalar(self.eps).sqrt())
            }
            Mode::Eval => {
                let mean = store.get(self.running_mean).reshape(&cshape);
                let std = store.get(self.running_var).add_scalar(self.eps).sqrt().reshape(&cshape);
                x.sub(&mean).div(&std)
            }
        };
        xn.mul(&store.get(self.gamma).reshape(&cshape)).add(&store.get(self.beta).reshape(&cshape))
    }

    /// Folds a batch's statistics into the running estimates.
    pub fn apply(store: &mut ParamStore, update: &BnUpdate, momentum: f64) {
        let blend = |old: &[f64], new: &[f64]| -> Vec<f64> {
            old.iter().zip(new).map(|(o, n)| (1.0 - momentum) * o + momentum * n).collect()
        };
        let m = blend(store.get(update.running_mean).data(), &update.mean);
        let v = blend(store.get(update.running_var).data(), &update.var);
        store.set(update.running_mean, m);
        store.set(update.running_var, v);
    }
}

/// Inverted dropout mask (`0` or `1/(1-p)`) with the shape of `shape`.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let keep = 1.0 - p;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
    Tensor::from_vec(data, shape)
}
