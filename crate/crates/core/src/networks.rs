//! Conditional encoder–decoder generator, conditional patch discriminator and
//! the frozen cascade feature network.

use std::path::{Path, PathBuf};

use pipgan_autograd::{no_grad, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ConditionVector;
use crate::error::{Error, Result};
use crate::image::{batch_tensor, tensor_images, Image, CHANNELS};
use crate::nn::{dropout_mask, normal, BatchNorm2d, BnUpdate, Conv2d, ConvTranspose2d, Linear, Mode, ParamId, ParamStore};

const LEAK: f64 = 0.2;

/// Encoder widths used at full depth; deeper stages repeat the last width.
pub const FULL_GENERATOR_CHANNELS: [usize; 6] = [64, 128, 256, 512, 512, 512];
pub const FULL_DISCRIMINATOR_CHANNELS: [usize; 4] = [64, 128, 256, 512];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Off,
    Dropout,
}

impl NoiseMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(NoiseMode::Off),
            "dropout" => Ok(NoiseMode::Dropout),
            o => Err(Error::InvalidConfig(format!("noise mode `{o}` (off|dropout)"))),
        }
    }
}

fn log2_exact(n: usize) -> Option<usize> {
    n.is_power_of_two().then(|| n.trailing_zeros() as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub image_size: usize,
    /// Output channels of each stride-2 encoder stage; its length is the depth.
    pub channels: Vec<usize>,
    pub num_classes: usize,
    pub noise: NoiseMode,
    pub dropout: f64,
    pub init_std: f64,
    /// Std of the condition-injection weights.
    pub cond_init_std: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    /// Encoder deep enough to reach a 1×1 code, widths from the pix2pix plan.
    pub fn standard(image_size: usize, num_classes: usize) -> Result<Self> {
        let depth = log2_exact(image_size)
            .filter(|&d| d >= 2)
            .ok_or_else(|| Error::InvalidConfig(format!("image size {image_size} is not a power of two >= 4")))?;
        let channels = (0..depth).map(|i| FULL_GENERATOR_CHANNELS[i.min(5)]).collect();
        Ok(GeneratorConfig {
            image_size,
            channels,
            num_classes,
            noise: NoiseMode::Off,
            dropout: 0.5,
            init_std: 0.02,
            cond_init_std: 0.2,
            seed: 0,
        })
    }

    /// Same depth with every width scaled by `1/divisor` (at least 1).
    pub fn narrowed(mut self, divisor: usize) -> Self {
        for c in &mut self.channels {
            *c = (*c / divisor).max(1);
        }
        self
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("generator needs at least one class".into()));
        }
        if self.depth() < 2 {
            return Err(Error::InvalidConfig("generator depth must be >= 2".into()));
        }
        if self.channels.contains(&0) {
            return Err(Error::InvalidConfig("generator channel widths must be positive".into()));
        }
        if self.image_size != 1usize << self.depth() {
            return Err(Error::InvalidConfig(format!(
                "{} stride-2 stages reduce {} px to {} px, not 1×1",
                self.depth(),
                self.image_size,
                self.image_size as f64 / (1u64 << self.depth()) as f64
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Output of the encoder half.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Bottleneck pre-activation (`x_c1`), `[N, code, 1, 1]`.
    pub x_c1: Tensor,
    /// Coded layer 1, `f(x_c1 + b_c1)`.
    pub y_c1: Tensor,
    /// Pre-activation encoder features, shallowest first.
    pub skips: Vec<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Classifier,
    Condition,
    Decoder,
}

/// U-Net style conditional generator with a classification tap on the code.
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    store: ParamStore,
    enc: Vec<Conv2d>,
    enc_bn: Vec<Option<BatchNorm2d>>,
    res: [Conv2d; 2],
    b_c1: ParamId,
    pc_head: Linear,
    w_c2: ParamId,
    b_c2: ParamId,
    dec: Vec<ConvTranspose2d>,
    dec_bn: Vec<Option<BatchNorm2d>>,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let depth = cfg.depth();
        let ch = &cfg.channels;
        let std = cfg.init_std;
        let code = ch[depth - 1];

        let mut enc = Vec::with_capacity(depth);
        let mut enc_bn = Vec::with_capacity(depth);
        for i in 0..depth {
            let cin = if i == 0 { CHANNELS } else { ch[i - 1] };
            // the outermost stage carries its own bias; the innermost one's bias is b_c1
            enc.push(Conv2d::new(&mut store, &format!("enc{i}"), cin, ch[i], 4, 2, 1, i == 0, std, &mut rng));
            let bn = (i > 0 && i < depth - 1).then(|| BatchNorm2d::new(&mut store, &format!("enc{i}.bn"), ch[i], &mut rng));
            enc_bn.push(bn);
        }
        let res = [
            Conv2d::new(&mut store, "res.conv1", code, code, 3, 1, 1, true, std, &mut rng),
            Conv2d::new(&mut store, "res.conv2", code, code, 3, 1, 1, true, std, &mut rng),
        ];
        let b_c1 = store.param("code.b_c1", vec![0.0; code], &[code]);
        let pc_head = Linear::new(&mut store, "pc_head", code, cfg.num_classes, std, &mut rng);
        let w_c2 = store.param("cond.w_c2", normal(&mut rng, code * cfg.num_classes, 0.0, cfg.cond_init_std), &[code, cfg.num_classes]);
        let b_c2 = store.param("code.b_c2", vec![0.0; code], &[code]);

        let mut dec = Vec::with_capacity(depth);
        let mut dec_bn = Vec::with_capacity(depth);
        for j in 0..depth {
            let cin = if j == depth - 1 { code } else { 2 * ch[j] };
            let cout = if j == 0 { CHANNELS } else { ch[j - 1] };
            dec.push(ConvTranspose2d::new(&mut store, &format!("dec{j}"), cin, cout, 4, 2, 1, j == 0, std, &mut rng));
            let bn = (j > 0).then(|| BatchNorm2d::new(&mut store, &format!("dec{j}.bn"), cout, &mut rng));
            dec_bn.push(bn);
        }
        Ok(Generator { cfg, store, enc, enc_bn, res, b_c1, pc_head, w_c2, b_c2, dec, dec_bn })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    pub fn w_c2(&self) -> ParamId {
        self.w_c2
    }

    pub fn b_c1(&self) -> ParamId {
        self.b_c1
    }

    pub fn b_c2(&self) -> ParamId {
        self.b_c2
    }

    /// Final up-convolution (weight, bias).
    pub fn output_layer(&self) -> (ParamId, Option<ParamId>) {
        (self.dec[0].weight, self.dec[0].bias)
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        let name = self.store.name(id);
        if name.starts_with("dec") {
            ParamGroup::Decoder
        } else if name.starts_with("pc_head") {
            ParamGroup::Classifier
        } else if name.starts_with("cond.") || name == "code.b_c2" {
            ParamGroup::Condition
        } else {
            ParamGroup::Encoder
        }
    }

    fn check_images(&self, x: &Tensor, what: &str) -> Result<()> {
        let s = self.cfg.image_size;
        if x.rank() != 4 || x.shape()[1..] != [CHANNELS, s, s] {
            let n = x.shape().first().copied().unwrap_or(0);
            return Err(Error::ShapeMismatch { context: what.into(), expected: vec![n, CHANNELS, s, s], actual: x.shape().to_vec() });
        }
        Ok(())
    }

    /// Encoder + residual bottleneck. `x` holds `[0,1]` images.
    pub fn encode(&self, x: &Tensor, mode: Mode, bn: &mut Vec<BnUpdate>) -> Result<Encoded> {
        self.check_images(x, "generator input")?;
        let st = &self.store;
        let mut h = x.mul_scalar(2.0).add_scalar(-1.0);
        let mut skips = Vec::with_capacity(self.enc.len());
        for (i, (conv, norm)) in self.enc.iter().zip(&self.enc_bn).enumerate() {
            if i > 0 {
                h = h.leaky_relu(LEAK);
            }
            h = conv.forward(st, &h);
            if let Some(norm) = norm {
                h = norm.forward(st, &h, mode, bn);
            }
            skips.push(h.clone());
        }
        let code = skips.pop().expect("depth >= 2");
        let inner = self.res[0].forward(st, &code.leaky_relu(LEAK)).leaky_relu(LEAK);
        let x_c1 = code.add(&self.res[1].forward(st, &inner));
        let y_c1 = self.code_activation(&x_c1, st.get(self.b_c1));
        Ok(Encoded { x_c1, y_c1, skips })
    }

    fn code_activation(&self, pre: &Tensor, bias: &Tensor) -> Tensor {
        pre.add(&bias.reshape(&[1, bias.numel(), 1, 1])).leaky_relu(LEAK)
    }

    /// Parallel-classification logits `[N, K]` from coded layer 1.
    pub fn classify_code(&self, y_c1: &Tensor) -> Tensor {
        let s = y_c1.shape();
        let spatial = (s[2] * s[3]) as f64;
        // average-pool to a vector (already 1×1 at full depth)
        let pooled = y_c1.sum_to(&[s[0], s[1], 1, 1]).mul_scalar(1.0 / spatial).reshape(&[s[0], s[1]]);
        self.pc_head.forward(&self.store, &pooled)
    }

    /// Coded layer 2: `f(x_c1 + w_c2·C + b_c2)` for a `[N, K]` condition batch.
    pub fn inject_condition(&self, x_c1: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let k = self.cfg.num_classes;
        if cond.rank() != 2 || cond.shape()[1] != k {
            return Err(Error::ConditionMismatch { expected: k, actual: cond.shape().last().copied().unwrap_or(0) });
        }
        let n = x_c1.shape()[0];
        if cond.shape()[0] != n {
            return Err(Error::ShapeMismatch { context: "condition batch".into(), expected: vec![n, k], actual: cond.shape().to_vec() });
        }
        let code = x_c1.shape()[1];
        let term = cond.matmul(&self.store.get(self.w_c2).t()).reshape(&[n, code, 1, 1]);
        Ok(self.code_activation(&x_c1.add(&term), self.store.get(self.b_c2)))
    }

    /// Decoder with skip copies; returns `[0,1]` images.
    pub fn decode(&self, y_c2: &Tensor, skips: &[Tensor], mode: Mode, rng: &mut ChaCha8Rng, bn: &mut Vec<BnUpdate>) -> Result<Tensor> {
        self.decode_traced(y_c2, skips, mode, rng, bn, |_, _| {})
    }

    /// `decode` that reports each decoder stage's concatenated input (before the
    /// rectifier) as `(stage, tensor)`.
    pub fn decode_traced(
        &self,
        y_c2: &Tensor,
        skips: &[Tensor],
        mode: Mode,
        rng: &mut ChaCha8Rng,
        bn: &mut Vec<BnUpdate>,
        mut trace: impl FnMut(usize, &Tensor),
    ) -> Result<Tensor> {
        let depth = self.cfg.depth();
        if skips.len() != depth - 1 {
            return Err(Error::ShapeMismatch { context: "decoder skips".into(), expected: vec![depth - 1], actual: vec![skips.len()] });
        }
        let st = &self.store;
        let mut u = y_c2.clone();
        for j in (0..depth).rev() {
            let mut out = self.dec[j].forward(st, &u);
            if j == 0 {
                return Ok(out.tanh().add_scalar(1.0).mul_scalar(0.5));
            }
            if let Some(norm) = &self.dec_bn[j] {
                out = norm.forward(st, &out, mode, bn);
            }
            if self.cfg.noise == NoiseMode::Dropout && j + 3 >= depth && self.cfg.dropout > 0.0 {
                out = out.mul(&dropout_mask(out.shape(), self.cfg.dropout, rng));
            }
            let skip = &skips[j - 1];
            if skip.shape() != out.shape() {
                return Err(Error::ShapeMismatch { context: format!("skip copy {}", j - 1), expected: out.shape().to_vec(), actual: skip.shape().to_vec() });
            }
            let joined = Tensor::cat(&[out, skip.clone()], 1);
            trace(j, &joined);
            u = joined.relu();
        }
        unreachable!("loop returns at the outermost stage")
    }

    /// `encode → inject_condition → decode`.
    pub fn generate(&self, x: &Tensor, cond: &Tensor, mode: Mode, rng: &mut ChaCha8Rng, bn: &mut Vec<BnUpdate>) -> Result<Tensor> {
        let enc = self.encode(x, mode, bn)?;
        let y_c2 = self.inject_condition(&enc.x_c1, cond)?;
        self.decode(&y_c2, &enc.skips, mode, rng, bn)
    }

    /// Inference on images with one condition each (evaluation mode, no graph).
    pub fn generate_images(&self, images: &[&Image], conds: &[ConditionVector], rng: &mut ChaCha8Rng) -> Result<Vec<Image>> {
        if images.len() != conds.len() {
            return Err(Error::InvalidConfig(format!("{} images but {} conditions", images.len(), conds.len())));
        }
        let x = batch_tensor(images.iter().copied())?;
        let c = condition_batch(conds, self.cfg.num_classes)?;
        let y = no_grad(|| self.generate(&x, &c, Mode::Eval, rng, &mut Vec::new()))?;
        Ok(tensor_images(&y))
    }

    pub fn generate_image(&self, image: &Image, cond: ConditionVector, rng: &mut ChaCha8Rng) -> Result<Image> {
        Ok(self.generate_images(&[image], &[cond], rng)?.remove(0))
    }
}

/// Stacks one-hot conditions into `[N, K]`.
pub fn condition_batch(conds: &[ConditionVector], k: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(conds.len() * k);
    for c in conds {
        if c.dim() != k {
            return Err(Error::ConditionMismatch { expected: k, actual: c.dim() });
        }
        data.extend(c.encoding());
    }
    Ok(Tensor::from_vec(data, &[conds.len(), k]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    /// Widths of the stride-2 stages; its length is the depth.
    pub channels: Vec<usize>,
    pub init_std: f64,
    pub seed: u64,
}

impl DiscriminatorConfig {
    /// Up to four stride-2 stages, leaving at least 4×4 for the final valid 4×4 conv.
    pub fn standard(image_size: usize) -> Result<Self> {
        let lg = log2_exact(image_size)
            .filter(|&d| d >= 3)
            .ok_or_else(|| Error::InvalidConfig(format!("image size {image_size} is not a power of two >= 8")))?;
        let depth = (lg - 2).min(4);
        Ok(DiscriminatorConfig { image_size, channels: FULL_DISCRIMINATOR_CHANNELS[..depth].to_vec(), init_std: 0.02, seed: 1 })
    }

    pub fn narrowed(mut self, divisor: usize) -> Self {
        for c in &mut self.channels {
            *c = (*c / divisor).max(1);
        }
        self
    }

    /// Side of the patch logit map.
    pub fn logit_size(&self) -> usize {
        (self.image_size >> self.channels.len()).saturating_sub(3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidConfig("discriminator needs positive stage widths".into()));
        }
        if self.image_size >> self.channels.len() < 4 {
            return Err(Error::InvalidConfig(format!(
                "{} stride-2 stages leave less than 4×4 of a {} px input",
                self.channels.len(),
                self.image_size
            )));
        }
        Ok(())
    }
}

/// Conditional patch discriminator over channel-concatenated (condition, candidate).
#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    store: ParamStore,
    stages: Vec<Conv2d>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let mut stages = Vec::new();
        let mut cin = 2 * CHANNELS;
        for (i, &c) in cfg.channels.iter().enumerate() {
            stages.push(Conv2d::new(&mut store, &format!("conv{i}"), cin, c, 4, 2, 1, true, cfg.init_std, &mut rng));
            cin = c;
        }
        let head = Conv2d::new(&mut store, "head", cin, 1, 4, 1, 0, true, cfg.init_std, &mut rng);
        Ok(Discriminator { cfg, store, stages, head })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Raw patch logits `[N, 1, h, w]`.
    pub fn logits(&self, condition: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        let s = self.cfg.image_size;
        for (t, what) in [(condition, "discriminator condition"), (candidate, "discriminator candidate")] {
            if t.rank() != 4 || t.shape()[1..] != [CHANNELS, s, s] {
                return Err(Error::ShapeMismatch { context: what.into(), expected: vec![t.shape().first().copied().unwrap_or(0), CHANNELS, s, s], actual: t.shape().to_vec() });
            }
        }
        if condition.shape() != candidate.shape() {
            return Err(Error::ShapeMismatch { context: "discriminator pair".into(), expected: condition.shape().to_vec(), actual: candidate.shape().to_vec() });
        }
        let pair = Tensor::cat(&[condition.clone(), candidate.clone()], 1).mul_scalar(2.0).add_scalar(-1.0);
        let mut h = pair;
        for conv in &self.stages {
            h = conv.forward(&self.store, &h).leaky_relu(LEAK);
        }
        Ok(self.head.forward(&self.store, &h))
    }

    /// Per-sample score `[N]`: mean of the patch logit map.
    pub fn score(&self, condition: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        Ok(patch_mean(&self.logits(condition, candidate)?))
    }
}

/// Mean over every non-batch axis, `[N, ...] → [N]`.
pub fn patch_mean(t: &Tensor) -> Tensor {
    let n = t.shape()[0];
    let per = t.numel() / n;
    t.reshape(&[n, per]).sum_to(&[n, 1]).mul_scalar(1.0 / per as f64).reshape(&[n])
}

pub const CASCADE_STAGES: usize = 5;
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    /// Widths of the five feature stages when no weights file is given.
    pub channels: Vec<usize>,
    pub seed: u64,
    pub weights_path: Option<PathBuf>,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig { channels: vec![16, 32, 64, 64, 64], seed: 0x5eed, weights_path: None }
    }
}

#[derive(Clone, Debug)]
enum CascadeStage {
    Conv { weight: ParamId, bias: ParamId },
    Identity,
}

/// Frozen multi-scale feature extractor. Stage `n` is a 3×3 convolution and
/// rectifier; a 2×2 average pool sits between consecutive stages, so the
/// feature maps shrink strictly. All entries are constants, never gradient
/// leaves.
#[derive(Clone, Debug)]
pub struct CascadeNet {
    store: ParamStore,
    stages: Vec<CascadeStage>,
    normalize: bool,
}

impl CascadeNet {
    pub fn new(cfg: &CascadeConfig) -> Result<Self> {
        match &cfg.weights_path {
            Some(p) => Self::from_weights(p),
            None => Self::random(&cfg.channels, cfg.seed),
        }
    }

    /// He-initialized random features from a fixed seed.
    pub fn random(channels: &[usize], seed: u64) -> Result<Self> {
        if channels.len() != CASCADE_STAGES || channels.contains(&0) {
            return Err(Error::InvalidConfig(format!("cascade network needs {CASCADE_STAGES} positive widths, got {channels:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut stages = Vec::new();
        let mut cin = CHANNELS;
        for (n, &c) in channels.iter().enumerate() {
            let std = (2.0 / (9 * cin) as f64).sqrt();
            let weight = store.buffer(format!("stage{n}.weight"), normal(&mut rng, c * cin * 9, 0.0, std), &[c, cin, 3, 3]);
            let bias = store.buffer(format!("stage{n}.bias"), vec![0.0; c], &[c]);
            stages.push(CascadeStage::Conv { weight, bias });
            cin = c;
        }
        Ok(CascadeNet { store, stages, normalize: true })
    }

    /// Loads `stage{n}.weight` `[O, C, 3, 3]` / `stage{n}.bias` `[O]` for n in 0..5
    /// from a tensor archive (see `checkpoint::read_archive`).
    pub fn from_weights(path: &Path) -> Result<Self> {
        let tensors = crate::checkpoint::read_archive(path)?;
        let mut store = ParamStore::new();
        let mut stages = Vec::new();
        let mut cin = CHANNELS;
        for n in 0..CASCADE_STAGES {
            let get = |name: String| {
                tensors
                    .iter()
                    .find(|(k, _, _)| *k == name)
                    .cloned()
                    .ok_or_else(|| Error::SchemaMismatch(format!("cascade weights {}: missing `{name}`", path.display())))
            };
            let (_, ws, wd) = get(format!("stage{n}.weight"))?;
            let (_, bs, bd) = get(format!("stage{n}.bias"))?;
            if ws.len() != 4 || ws[1] != cin || ws[2] != 3 || ws[3] != 3 || bs != vec![ws[0]] {
                return Err(Error::SchemaMismatch(format!("cascade stage {n}: weight {ws:?}, bias {bs:?}, expected [O, {cin}, 3, 3] / [O]")));
            }
            let weight = store.buffer(format!("stage{n}.weight"), wd, &ws);
            let bias = store.buffer(format!("stage{n}.bias"), bd, &bs);
            stages.push(CascadeStage::Conv { weight, bias });
            cin = ws[0];
        }
        Ok(CascadeNet { store, stages, normalize: true })
    }

    /// One stage that returns its input unchanged (no normalization).
    pub fn identity() -> Self {
        CascadeNet { store: ParamStore::new(), stages: vec![CascadeStage::Identity], normalize: false }
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn digest(&self) -> String {
        self.store.digest()
    }

    /// Feature maps for `[N, 3, H, W]` images in `[0,1]`.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.rank() != 4 || x.shape()[1] != CHANNELS {
            return Err(Error::ShapeMismatch { context: "cascade input".into(), expected: vec![x.shape().first().copied().unwrap_or(0), CHANNELS, 0, 0], actual: x.shape().to_vec() });
        }
        let conv_stages = self.stages.iter().filter(|s| matches!(s, CascadeStage::Conv { .. })).count();
        let side = x.shape()[2].min(x.shape()[3]);
        if conv_stages > 1 && side >> (conv_stages - 1) == 0 {
            return Err(Error::InvalidConfig(format!("{side} px input is too small for {conv_stages} cascade stages")));
        }
        let mut h = if self.normalize {
            let mean = Tensor::from_vec(IMAGENET_MEAN.to_vec(), &[1, 3, 1, 1]);
            let std = Tensor::from_vec(IMAGENET_STD.to_vec(), &[1, 3, 1, 1]);
            x.sub(&mean).div(&std)
        } else {
            x.clone()
        };
        let mut feats = Vec::with_capacity(self.stages.len());
        for (n, stage) in self.stages.iter().enumerate() {
            if n > 0 {
                h = avg_pool2(&h);
            }
            h = match stage {
                CascadeStage::Identity => h,
                CascadeStage::Conv { weight, bias } => {
                    let b = self.store.get(*bias);
                    h.conv2d(self.store.get(*weight), 1, 1).add(&b.reshape(&[1, b.numel(), 1, 1])).relu()
                }
            };
            feats.push(h.clone());
        }
        Ok(feats)
    }
}

/// 2×2 mean pooling with stride 2.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let k = Tensor::full(&[1, 1, 2, 2], 0.25);
    x.reshape(&[n * c, 1, h, w]).conv2d(&k, 2, 0).reshape(&[n, c, h / 2, w / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use pipgan_autograd::Tensor;

    fn rand_images(n: usize, size: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..n * 3 * size * size).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        Tensor::from_vec(v, &[n, 3, size, size])
    }

    fn small_gen(size: usize, k: usize) -> Generator {
        let cfg = GeneratorConfig::standard(size, k).unwrap().narrowed(16);
        Generator::new(cfg).unwrap()
    }

    #[test]
    fn code_is_1x1_at_64px() {
        let g = Generator::new(GeneratorConfig::standard(64, 5).unwrap().narrowed(8)).unwrap();
        assert_eq!(g.config().depth(), 6);
        let enc = g.encode(&rand_images(1, 64, 0), Mode::Eval, &mut Vec::new()).unwrap();
        assert_eq!(&enc.x_c1.shape()[2..], &[1, 1]);
        assert_eq!(enc.x_c1.shape()[1], 512 / 8);
        let full = GeneratorConfig::standard(64, 5).unwrap();
        assert_eq!(full.channels, vec![64, 128, 256, 512, 512, 512]);
        assert_eq!(*full.channels.last().unwrap(), 512);
    }

    #[test]
    fn depth_five_at_32px() {
        let cfg = GeneratorConfig::standard(32, 5).unwrap();
        assert_eq!(cfg.depth(), 5);
        let g = Generator::new(cfg.narrowed(16)).unwrap();
        let enc = g.encode(&rand_images(2, 32, 1), Mode::Eval, &mut Vec::new()).unwrap();
        assert_eq!(&enc.y_c1.shape()[2..], &[1, 1]);
        let mut bad = GeneratorConfig::standard(32, 5).unwrap();
        bad.channels.pop();
        assert!(Generator::new(bad).is_err());
    }

    #[test]
    fn encode_is_deterministic_and_checks_shape() {
        let g = small_gen(16, 3);
        let x = rand_images(2, 16, 3);
        let a = g.encode(&x, Mode::Eval, &mut Vec::new()).unwrap();
        let b = g.encode(&x, Mode::Eval, &mut Vec::new()).unwrap();
        assert_eq!(a.y_c1.data(), b.y_c1.data());
        let err = g.encode(&rand_images(1, 32, 0), Mode::Eval, &mut Vec::new()).unwrap_err();
        assert!(err.to_string().contains("expected [1, 3, 16, 16]"), "{err}");
    }

    #[test]
    fn classify_matches_matrix_oracle() {
        let g = small_gen(16, 5);
        let enc = g.encode(&rand_images(3, 16, 4), Mode::Eval, &mut Vec::new()).unwrap();
        let logits = g.classify_code(&enc.y_c1);
        assert_eq!(logits.shape(), &[3, 5]);
        let code = enc.y_c1.shape()[1];
        let w = g.store().get(g.store().find("pc_head.weight").unwrap()).data().to_vec();
        let b = g.store().get(g.store().find("pc_head.bias").unwrap()).data().to_vec();
        for n in 0..3 {
            for k in 0..5 {
                let mut acc = b[k];
                for c in 0..code {
                    acc += enc.y_c1.data()[n * code + c] * w[c * 5 + k];
                }
                assert!((acc - logits.data()[n * 5 + k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn injection_selects_condition_column() {
        let mut g = small_gen(16, 4);
        let code = g.config().channels.last().copied().unwrap();
        let enc = g.encode(&rand_images(1, 16, 5), Mode::Eval, &mut Vec::new()).unwrap();
        // zero condition with b_c2 = b_c1 reproduces coded layer 1
        let b1: Vec<f64> = (0..code).map(|i| i as f64 * 0.01).collect();
        let (ib1, ib2) = (g.b_c1(), g.b_c2());
        g.store_mut().set(ib1, b1.clone());
        g.store_mut().set(ib2, b1);
        let enc = g.encode(&enc.skips[0].detach().sum_to(&[1, 1, 1, 1]).broadcast_to(&[1, 3, 16, 16]).sigmoid(), Mode::Eval, &mut Vec::new()).unwrap();
        let zero = Tensor::zeros(&[1, 4]);
        let y2 = g.inject_condition(&enc.x_c1, &zero).unwrap();
        assert_eq!(y2.data(), enc.y_c1.data());

        // one-hot k adds column k of w_c2 before the activation
        g.store_mut().set(ib2, vec![0.0; code]);
        let w = g.store().get(g.w_c2()).to_vec();
        let c = Tensor::from_vec(vec![0.0, 0.0, 1.0, 0.0], &[1, 4]);
        let y = g.inject_condition(&enc.x_c1, &c).unwrap();
        for i in 0..code {
            let pre = enc.x_c1.data()[i] + w[i * 4 + 2];
            let want = if pre > 0.0 { pre } else { 0.2 * pre };
            assert!((y.data()[i] - want).abs() < 1e-12);
        }
        assert!(matches!(g.inject_condition(&enc.x_c1, &Tensor::zeros(&[1, 3])), Err(Error::ConditionMismatch { .. })));
    }

    #[test]
    fn generate_preserves_shape_and_range() {
        for size in [16, 32] {
            let g = small_gen(size, 3);
            let x = rand_images(2, size, 6);
            let c = condition_batch(&[ConditionVector::one_hot(0, 3).unwrap(), ConditionVector::one_hot(2, 3).unwrap()], 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let y = g.generate(&x, &c, Mode::Train, &mut rng, &mut Vec::new()).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zero_output_layer_gives_mid_gray() {
        let mut g = small_gen(16, 3);
        let (w, b) = g.output_layer();
        let nw = g.store().get(w).numel();
        g.store_mut().set(w, vec![0.0; nw]);
        g.store_mut().set(b.unwrap(), vec![0.0; 3]);
        let img = Image::filled(16, 16, 0.3);
        let out = g.generate_image(&img, ConditionVector::one_hot(1, 3).unwrap(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn dropout_noise_is_seeded() {
        let mut cfg = GeneratorConfig::standard(16, 3).unwrap().narrowed(16);
        cfg.noise = NoiseMode::Dropout;
        let g = Generator::new(cfg).unwrap();
        let x = rand_images(1, 16, 7);
        let c = condition_batch(&[ConditionVector::one_hot(0, 3).unwrap()], 3).unwrap();
        let run = |seed| g.generate(&x, &c, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(seed), &mut Vec::new()).unwrap().to_vec();
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn skip_copies_carry_encoder_features() {
        let g = small_gen(16, 3);
        let x = rand_images(1, 16, 8);
        let enc = g.encode(&x, Mode::Eval, &mut Vec::new()).unwrap();
        let c = condition_batch(&[ConditionVector::one_hot(0, 3).unwrap()], 3).unwrap();
        let y2 = g.inject_condition(&enc.x_c1, &c).unwrap();
        let mut seen = 0;
        g.decode_traced(&y2, &enc.skips, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), &mut Vec::new(), |j, joined| {
            let skip = &enc.skips[j - 1];
            let half = joined.shape()[1] - skip.shape()[1];
            assert_eq!(joined.narrow(1, half, skip.shape()[1]).data(), skip.data());
            assert_eq!(&joined.shape()[2..], &skip.shape()[2..]);
            seen += 1;
        })
        .unwrap();
        assert_eq!(seen, g.config().depth() - 1);
    }

    #[test]
    fn discriminator_shapes_and_independence() {
        let cfg = DiscriminatorConfig::standard(64).unwrap().narrowed(16);
        assert_eq!(cfg.channels.len(), 4);
        assert_eq!(cfg.logit_size(), 1);
        let d = Discriminator::new(cfg).unwrap();
        let a = rand_images(2, 64, 9);
        let b = rand_images(2, 64, 10);
        let l = d.logits(&a, &b).unwrap();
        assert_eq!(l.shape(), &[2, 1, 1, 1]);
        let swapped = d.logits(&b, &a).unwrap();
        assert_ne!(l.data(), swapped.data());
        let single = d.logits(&a.narrow(0, 1, 1), &b.narrow(0, 1, 1)).unwrap();
        assert_eq!(single.data()[0], l.data()[1]);

        let d32 = DiscriminatorConfig::standard(32).unwrap();
        assert_eq!((d32.channels.len(), d32.logit_size()), (3, 1));
        assert!(d.logits(&a, &rand_images(2, 32, 0)).is_err());
    }

    #[test]
    fn cascade_has_five_shrinking_maps() {
        let net = CascadeNet::random(&[4, 4, 4, 4, 4], 3).unwrap();
        let x = rand_images(2, 32, 11);
        let feats = net.features(&x).unwrap();
        assert_eq!(feats.len(), 5);
        let sides: Vec<usize> = feats.iter().map(|f| f.shape()[2]).collect();
        assert_eq!(sides, vec![32, 16, 8, 4, 2]);
        let again = net.features(&x).unwrap();
        for (a, b) in feats.iter().zip(&again) {
            assert_eq!(a.data(), b.data());
        }
        assert!(net.store().trainable_ids().is_empty());
    }

    #[test]
    fn cascade_gradients_reach_image_only() {
        let net = CascadeNet::random(&[2, 2, 2, 2, 2], 3).unwrap();
        let x = rand_images(1, 16, 12).detach_var();
        let loss = net.features(&x).unwrap().iter().map(|f| f.sum_all()).reduce(|a, b| a.add(&b)).unwrap();
        let g = loss.backward();
        assert!(g.get(&x).is_some());
        assert_eq!(g.len(), 1);
    }
}
