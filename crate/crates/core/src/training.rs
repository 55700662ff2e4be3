//! Per-stage training: discriminator update, classification pass, generation
//! pass, then a single generator update; plus checkpoints and the stage loop.

use std::path::Path;

use pipgan_autograd::{no_grad, Gradients, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointMeta, MetricSnapshot, META_SCHEMA};
use crate::config::{ModelConfig, RunConfig};
use crate::data::{AttributeSchema, ConditionVector, Dataset, SampleRecord, StageKind};
use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;
use crate::image::{batch_tensor, tensor_images, Image};
use crate::losses::{
    adversarial_d_loss, adversarial_g_loss, cascade_loss, check_second_order, classification_loss, gradient_penalty, l1_loss, sample_alpha,
    AdversarialForm, CascadeWeights, LambdaMode, LossWeights,
};
use crate::networks::{condition_batch, CascadeNet, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::nn::{BatchNorm2d, BnUpdate, Mode};
use crate::optim::{Adam, AdamConfig};

/// Architecture and condition schema of one stage; enough to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: StageKind,
    pub schema: AttributeSchema,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl StageSpec {
    pub fn new(stage: StageKind, schema: AttributeSchema, image_size: usize, model: &ModelConfig, seed: u64) -> Result<Self> {
        schema.validate()?;
        let mut generator = GeneratorConfig::standard(image_size, schema.len())?;
        if let Some(ch) = &model.generator_channels {
            generator.channels = ch.clone();
        }
        generator = generator.narrowed(model.width_divisor);
        generator.noise = model.noise;
        generator.dropout = model.dropout;
        generator.init_std = model.init_std;
        generator.cond_init_std = model.cond_init_std;
        generator.seed = seed;
        let mut discriminator = DiscriminatorConfig::standard(image_size)?;
        if let Some(ch) = &model.discriminator_channels {
            discriminator.channels = ch.clone();
        }
        discriminator = discriminator.narrowed(model.width_divisor);
        discriminator.init_std = model.init_std;
        discriminator.seed = seed ^ 0xD15C;
        generator.validate()?;
        discriminator.validate()?;
        Ok(StageSpec { stage, schema, generator, discriminator })
    }
}

/// Generator and discriminator of one stage.
#[derive(Clone, Debug)]
pub struct StageModel {
    pub spec: StageSpec,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl StageModel {
    pub fn new(spec: StageSpec) -> Result<Self> {
        if spec.generator.num_classes != spec.schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "generator has {} classes, schema `{}` has {}",
                spec.generator.num_classes,
                spec.schema.name,
                spec.schema.len()
            )));
        }
        if spec.generator.image_size != spec.discriminator.image_size {
            return Err(Error::SizeMismatch(spec.generator.image_size, spec.discriminator.image_size));
        }
        Ok(StageModel { generator: Generator::new(spec.generator.clone())?, discriminator: Discriminator::new(spec.discriminator.clone())?, spec })
    }

    pub fn image_size(&self) -> usize {
        self.spec.generator.image_size
    }

    pub fn num_classes(&self) -> usize {
        self.spec.schema.len()
    }

    /// Inference (evaluation mode) for images paired with class indices.
    pub fn generate(&self, images: &[&Image], classes: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<Image>> {
        let k = self.num_classes();
        let conds = classes.iter().map(|&c| ConditionVector::one_hot(c, k)).collect::<Result<Vec<_>>>()?;
        for img in images {
            if img.height() != self.image_size() || img.width() != self.image_size() {
                return Err(Error::ShapeMismatch {
                    context: format!("{} stage input", self.spec.stage.name()),
                    expected: vec![3, self.image_size(), self.image_size()],
                    actual: img.shape().to_vec(),
                });
            }
        }
        self.generator.generate_images(images, &conds, rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: u64,
    pub d_steps_per_g_step: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub lambda_mode: LambdaMode,
    pub adversarial_form: AdversarialForm,
    /// Adds the penalty (with its history through the generated image) to the generator objective.
    pub gp_in_generator: bool,
    /// Evaluation snapshot interval in steps (0 = only at the end).
    pub eval_every: u64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::from_run(&RunConfig::default())
    }
}

impl TrainConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        TrainConfig {
            adam: cfg.train.adam(),
            batch_size: cfg.train.batch_size,
            max_steps: cfg.train.max_steps,
            d_steps_per_g_step: cfg.train.d_steps_per_g_step,
            seed: cfg.seed,
            weights: cfg.loss.weights(),
            lambda_mode: cfg.loss.lambda_mode,
            adversarial_form: cfg.loss.adversarial_form,
            gp_in_generator: cfg.loss.gp_in_generator,
            eval_every: cfg.train.eval_every,
            bn_momentum: cfg.train.bn_momentum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.adam.learning_rate > 0.0) || self.batch_size == 0 || self.max_steps == 0 || self.d_steps_per_g_step == 0 {
            return Err(Error::InvalidConfig("learning_rate > 0, batch_size >= 1, max_steps >= 1 and d_steps_per_g_step >= 1 are required".into()));
        }
        self.weights.validate()
    }
}

/// Frozen pieces shared by every step of a stage.
#[derive(Clone, Debug)]
pub struct TrainContext {
    pub cfg: TrainConfig,
    pub cascade: CascadeNet,
    pub lambdas: CascadeWeights,
}

impl TrainContext {
    pub fn new(cfg: TrainConfig, cascade: CascadeNet, image_size: usize) -> Result<Self> {
        cfg.validate()?;
        check_second_order()?;
        let lambdas = CascadeWeights::for_mode(cfg.lambda_mode, &cascade, image_size)?;
        Ok(TrainContext { cfg, cascade, lambdas })
    }
}

/// Parameters, optimizer moments, step counter and sampling state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: StageModel,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub step: u64,
    pub rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
    order: Vec<usize>,
    cursor: usize,
}

impl TrainState {
    pub fn new(model: StageModel, cfg: &TrainConfig) -> Self {
        let g_opt = Adam::new(cfg.adam, model.generator.store());
        let d_opt = Adam::new(cfg.adam, model.discriminator.store());
        TrainState { model, g_opt, d_opt, step: 0, rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7A41_17), order: Vec::new(), cursor: 0 }
    }

    /// Next `batch_size` indices from a seeded per-epoch permutation of `0..n`.
    pub fn next_batch(&mut self, n: usize, batch_size: usize) -> Vec<usize> {
        let take = batch_size.min(n);
        let mut out = Vec::with_capacity(take);
        while out.len() < take {
            if self.cursor >= self.order.len() || self.order.len() != n {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    fn rng_json(&self) -> serde_json::Value {
        serde_json::to_value(RngState {
            seed: hex::encode(self.rng.get_seed()),
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos().to_string(),
            order: self.order.clone(),
            cursor: self.cursor,
        })
        .expect("rng state is serializable")
    }

    fn restore_rng(&mut self, v: &serde_json::Value) -> Result<()> {
        let s: RngState = serde_json::from_value(v.clone()).map_err(|e| Error::SchemaMismatch(format!("rng state: {e}")))?;
        let seed: [u8; 32] = hex::decode(&s.seed)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::SchemaMismatch("rng seed is not 32 hex bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(s.stream);
        rng.set_word_pos(s.word_pos.parse().map_err(|_| Error::SchemaMismatch("rng word position".into()))?);
        self.rng = rng;
        self.order = s.order;
        self.cursor = s.cursor;
        Ok(())
    }
}

/// Stacked tensors of one mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub conditions: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(records: &[&SampleRecord], classes: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("training batch".into()));
        }
        let conds: Vec<ConditionVector> = records.iter().map(|r| r.condition).collect();
        Ok(Batch {
            inputs: batch_tensor(records.iter().map(|r| r.input.as_ref()))?,
            targets: batch_tensor(records.iter().map(|r| r.target.as_ref()))?,
            conditions: condition_batch(&conds, classes)?,
            labels: conds.iter().map(|c| c.index()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss_adv_d: f64,
    pub loss_adv_g: f64,
    pub loss_pc: f64,
    pub loss_cascade: f64,
    pub loss_gp: f64,
    pub loss_l1: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    DiscriminatorUpdate,
    Classification,
    Generation,
    GeneratorUpdate,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub losses: LossRecord,
    /// Phases in execution order.
    pub phases: Vec<Phase>,
    pub generator_updates: usize,
}

fn finite(term: &'static str, v: f64, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { term, step })
    }
}

/// Discriminator update: adversarial loss on real vs. generated pairs plus the
/// weighted gradient penalty; updates the discriminator only. Returns `(adv_d, gp)`.
pub fn discriminator_phase(state: &mut TrainState, ctx: &TrainContext, batch: &Batch) -> Result<(f64, f64)> {
    let step = state.step + 1;
    let fake = no_grad(|| state.model.generator.generate(&batch.inputs, &batch.conditions, Mode::Train, &mut state.rng, &mut Vec::new()))?;
    let d = &state.model.discriminator;
    let real_logits = d.logits(&batch.inputs, &batch.targets)?;
    let fake_logits = d.logits(&batch.inputs, &fake)?;
    let adv = adversarial_d_loss(&real_logits, &fake_logits);
    let w_gp = ctx.cfg.weights.gradient_penalty;
    let (loss, gp) = if w_gp > 0.0 {
        let alpha = sample_alpha(&mut state.rng, batch.len());
        let gp = gradient_penalty(|x| d.score(&batch.inputs, x), &batch.targets, &fake, &alpha, true)?;
        (adv.add(&gp.mul_scalar(w_gp)), finite("gradient_penalty", gp.item(), step)?)
    } else {
        (adv.clone(), 0.0)
    };
    let adv_v = finite("adversarial_d", adv.item(), step)?;
    let grads = loss.backward();
    state.d_opt.step(state.model.discriminator.store_mut(), &grads);
    Ok((adv_v, gp))
}

/// Classification pass: real labeled images (the targets, labelled with
/// their category) through the encoder and classification head.
pub fn classification_phase(state: &mut TrainState, ctx: &TrainContext, batch: &Batch) -> Result<(f64, Gradients)> {
    let g = &state.model.generator;
    let enc = g.encode(&batch.targets, Mode::Train, &mut Vec::new())?;
    let loss = classification_loss(&g.classify_code(&enc.y_c1), &batch.labels)?;
    let value = finite("classification", loss.item(), state.step + 1)?;
    let w = ctx.cfg.weights.classification;
    let grads = if w > 0.0 { loss.mul_scalar(w).backward() } else { Gradients::default() };
    Ok((value, grads))
}

/// Values of the generation-pass terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GenerationValues {
    pub adversarial: f64,
    pub cascade: f64,
    pub l1: f64,
    /// Penalty routed to the generator (only with `gp_in_generator`).
    pub gradient_penalty: f64,
}

/// Generation pass: adversarial, cascade and L1 terms on `G(x, C)`.
pub fn generation_phase(state: &mut TrainState, ctx: &TrainContext, batch: &Batch) -> Result<(GenerationValues, Gradients, Vec<BnUpdate>)> {
    let step = state.step + 1;
    let w = ctx.cfg.weights;
    let mut bn = Vec::new();
    let fake = state.model.generator.generate(&batch.inputs, &batch.conditions, Mode::Train, &mut state.rng, &mut bn)?;
    let d = &state.model.discriminator;
    let adv = adversarial_g_loss(&d.logits(&batch.inputs, &fake)?, ctx.cfg.adversarial_form);
    let l1 = l1_loss(&batch.targets, &fake)?;
    let cascade = if w.cascade > 0.0 {
        cascade_loss(&ctx.cascade, &batch.targets, &fake, &ctx.lambdas)?
    } else {
        no_grad(|| cascade_loss(&ctx.cascade, &batch.targets, &fake.detach(), &ctx.lambdas))?
    };
    let mut total = adv.mul_scalar(w.adversarial).add(&l1.mul_scalar(w.l1));
    if w.cascade > 0.0 {
        total = total.add(&cascade.mul_scalar(w.cascade));
    }
    let mut values = GenerationValues {
        adversarial: finite("adversarial_g", adv.item(), step)?,
        cascade: finite("cascade", cascade.item(), step)?,
        l1: finite("l1", l1.item(), step)?,
        gradient_penalty: 0.0,
    };
    if ctx.cfg.gp_in_generator && w.gradient_penalty > 0.0 {
        let alpha = sample_alpha(&mut state.rng, batch.len());
        let gp = gradient_penalty(|x| d.score(&batch.inputs, x), &batch.targets, &fake, &alpha, false)?;
        values.gradient_penalty = finite("gradient_penalty", gp.item(), step)?;
        total = total.add(&gp.mul_scalar(w.gradient_penalty));
    }
    Ok((values, total.backward(), bn))
}

/// The single generator update after both passes; also folds the generation
/// pass's batch statistics into the running estimates.
pub fn generator_update(state: &mut TrainState, ctx: &TrainContext, grads: &Gradients, bn: &[BnUpdate]) {
    let store = state.model.generator.store_mut();
    state.g_opt.step(store, grads);
    for u in bn {
        BatchNorm2d::apply(store, u, ctx.cfg.bn_momentum);
    }
}

pub fn train_step(state: &mut TrainState, ctx: &TrainContext, batch: &Batch) -> Result<StepReport> {
    let step = state.step + 1;
    let mut phases = Vec::with_capacity(4);
    let (mut adv_d, mut gp) = (0.0, 0.0);
    for _ in 0..ctx.cfg.d_steps_per_g_step {
        (adv_d, gp) = discriminator_phase(state, ctx, batch)?;
        phases.push(Phase::DiscriminatorUpdate);
    }
    let (pc, mut grads) = classification_phase(state, ctx, batch)?;
    phases.push(Phase::Classification);
    let (gen, gen_grads, bn) = generation_phase(state, ctx, batch)?;
    grads.accumulate(gen_grads);
    phases.push(Phase::Generation);
    generator_update(state, ctx, &grads, &bn);
    phases.push(Phase::GeneratorUpdate);
    state.step = step;

    let w = ctx.cfg.weights;
    let gp_logged = if ctx.cfg.gp_in_generator { gen.gradient_penalty } else { gp };
    let total = w.adversarial * gen.adversarial + w.cascade * gen.cascade + w.gradient_penalty * gp_logged + w.classification * pc + w.l1 * gen.l1;
    let losses = LossRecord {
        step,
        loss_adv_d: adv_d,
        loss_adv_g: gen.adversarial,
        loss_pc: pc,
        loss_cascade: gen.cascade,
        loss_gp: gp_logged,
        loss_l1: gen.l1,
        total: finite("total", total, step)?,
    };
    Ok(StepReport { losses, phases, generator_updates: 1 })
}

/// Mean L1 and image metrics of the generator (evaluation mode) over `records`.
pub fn evaluate_records(model: &StageModel, records: &[SampleRecord], batch_size: usize, seed: u64) -> Result<(f64, MetricsReport)> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outputs = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        let x: Vec<&Image> = chunk.iter().map(|r| r.input.as_ref()).collect();
        let c: Vec<usize> = chunk.iter().map(|r| r.condition.index()).collect();
        outputs.extend(model.generate(&x, &c, &mut rng)?);
    }
    let mut l1 = 0.0;
    for (out, r) in outputs.iter().zip(records) {
        l1 += out.data().iter().zip(r.target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / out.data().len() as f64;
    }
    let report = MetricsReport::from_images(
        outputs
            .iter()
            .zip(records)
            .enumerate()
            .map(|(i, (o, r))| (format!("{}_{}_{i}", r.subject_id, r.condition.index()), o, r.target.as_ref())),
    )?;
    Ok((l1 / records.len() as f64, report))
}

/// Re-estimates batch-norm running statistics with exact averages over
/// `records` (training-mode forward passes, no parameter change).
pub fn recalibrate_batch_norm(model: &mut StageModel, records: &[SampleRecord], batch_size: usize) -> Result<()> {
    if records.is_empty() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sums: Vec<BnUpdate> = Vec::new();
    let mut batches = 0usize;
    for chunk in records.chunks(batch_size.max(1)) {
        let refs: Vec<&SampleRecord> = chunk.iter().collect();
        let b = Batch::new(&refs, model.num_classes())?;
        let mut bn = Vec::new();
        no_grad(|| model.generator.generate(&b.inputs, &b.conditions, Mode::Train, &mut rng, &mut bn))?;
        if sums.is_empty() {
            sums = bn;
        } else {
            for (s, u) in sums.iter_mut().zip(&bn) {
                s.mean.iter_mut().zip(&u.mean).for_each(|(a, b)| *a += b);
                s.var.iter_mut().zip(&u.var).for_each(|(a, b)| *a += b);
            }
        }
        batches += 1;
    }
    for mut s in sums {
        s.mean.iter_mut().for_each(|v| *v /= batches as f64);
        s.var.iter_mut().for_each(|v| *v /= batches as f64);
        BatchNorm2d::apply(model.generator.store_mut(), &s, 1.0);
    }
    Ok(())
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LossRecord>,
    pub metrics: Vec<MetricSnapshot>,
}

/// Runs `max_steps` steps on `train`, with evaluation snapshots on `eval`
/// every `eval_every` steps and after the last one. `on_step` sees every log line.
pub fn train_stage(
    ctx: &TrainContext,
    model: StageModel,
    train: &[SampleRecord],
    eval: &[SampleRecord],
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let mut state = TrainState::new(model, &ctx.cfg);
    let mut log = Vec::with_capacity(ctx.cfg.max_steps as usize);
    let mut metrics = Vec::new();
    let eval_set = if eval.is_empty() { train } else { eval };
    let k = state.model.num_classes();
    for _ in 0..ctx.cfg.max_steps {
        let idx = state.next_batch(train.len(), ctx.cfg.batch_size);
        let refs: Vec<&SampleRecord> = idx.iter().map(|&i| &train[i]).collect();
        let batch = Batch::new(&refs, k)?;
        let report = train_step(&mut state, ctx, &batch)?;
        on_step(&report.losses);
        log.push(report.losses);
        let last = state.step == ctx.cfg.max_steps;
        if last || (ctx.cfg.eval_every > 0 && state.step % ctx.cfg.eval_every == 0) {
            let (l1, r) = evaluate_records(&state.model, eval_set, ctx.cfg.batch_size, ctx.cfg.seed)?;
            log::info!("step {}: eval l1 {:.5} psnr {:.3} dB", state.step, l1, r.aggregate.psnr_db);
            metrics.push(MetricSnapshot { step: state.step, l1, psnr_db: r.aggregate.psnr_db, mse: r.aggregate.mse, rmse: r.aggregate.rmse });
        }
    }
    Ok(TrainOutcome { state, log, metrics })
}

/// Writes the training log CSV.
pub fn write_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in log {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Saves parameters, optimizer moments and metadata into `dir`.
pub fn save_state(dir: &Path, state: &TrainState, config_hash: &str, seed: u64, metrics: &[MetricSnapshot]) -> Result<()> {
    let m = &state.model;
    let mut tensors = Vec::new();
    tensors.extend(checkpoint::prefixed("generator.", m.generator.store().export()));
    tensors.extend(checkpoint::prefixed("discriminator.", m.discriminator.store().export()));
    tensors.extend(checkpoint::prefixed("generator_opt.", state.g_opt.export(m.generator.store())));
    tensors.extend(checkpoint::prefixed("discriminator_opt.", state.d_opt.export(m.discriminator.store())));
    let meta = CheckpointMeta {
        schema: META_SCHEMA,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash.to_string(),
        stage: m.spec.stage.name().to_string(),
        step: state.step,
        seed,
        model: serde_json::to_value(&m.spec)?,
        metrics: metrics.to_vec(),
        rng: Some(state.rng_json()),
    };
    checkpoint::save_checkpoint(dir, &meta, &tensors)
}

/// Rebuilds the stage model stored in `dir`.
pub fn load_model(dir: &Path) -> Result<(StageModel, CheckpointMeta)> {
    let (meta, tensors) = checkpoint::load_checkpoint(dir)?;
    let spec: StageSpec = serde_json::from_value(meta.model.clone()).map_err(|e| Error::SchemaMismatch(format!("{}: model description: {e}", dir.display())))?;
    let mut model = StageModel::new(spec)?;
    model.generator.store_mut().import("", &checkpoint::with_prefix(&tensors, "generator."))?;
    model.discriminator.store_mut().import("", &checkpoint::with_prefix(&tensors, "discriminator."))?;
    Ok((model, meta))
}

/// Like [`load_model`] but requires the given stage kind and category list.
pub fn load_model_expecting(dir: &Path, stage: StageKind, schema: Option<&AttributeSchema>) -> Result<(StageModel, CheckpointMeta)> {
    let (model, meta) = load_model(dir)?;
    if model.spec.stage != stage {
        return Err(Error::SchemaMismatch(format!("{} holds a {} stage, expected {}", dir.display(), model.spec.stage.name(), stage.name())));
    }
    if let Some(s) = schema {
        if s.categories != model.spec.schema.categories {
            return Err(Error::SchemaMismatch(format!(
                "{}: checkpoint has {} categories {:?}, expected {} {:?}",
                dir.display(),
                model.spec.schema.len(),
                model.spec.schema.categories,
                s.len(),
                s.categories
            )));
        }
    }
    Ok((model, meta))
}

/// Restores a full training state (for resuming).
pub fn load_state(dir: &Path, cfg: &TrainConfig) -> Result<(TrainState, CheckpointMeta)> {
    let (model, meta) = load_model(dir)?;
    let tensors = checkpoint::read_archive(&dir.join(checkpoint::PARAMS_FILE))?;
    let mut state = TrainState::new(model, cfg);
    state.g_opt.import(state.model.generator.store(), &checkpoint::with_prefix(&tensors, "generator_opt."))?;
    state.d_opt.import(state.model.discriminator.store(), &checkpoint::with_prefix(&tensors, "discriminator_opt."))?;
    state.step = meta.step;
    if let Some(r) = &meta.rng {
        state.restore_rng(r)?;
    }
    Ok((state, meta))
}

/// Replaces each expression-stage input (the neutral-expression image at some
/// pose) with the pose stage's output for that pose from the subject's
/// neutral image. Inputs already at the neutral pose are kept.
pub fn substitute_stage1_inputs(dataset: &Dataset, records: &[SampleRecord], pose_stage: &StageModel) -> Result<Vec<SampleRecord>> {
    let neutral_pose = dataset.pose.neutral_index;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(records.len());
    let mut cache: std::collections::HashMap<(String, usize, usize), std::sync::Arc<Image>> = Default::default();
    for r in records {
        let (p, e) = r.source_attrs;
        if p == neutral_pose {
            out.push(r.clone());
            continue;
        }
        let key = (r.subject_id.clone(), p, e);
        let img = match cache.get(&key) {
            Some(img) => img.clone(),
            None => {
                let src = dataset
                    .find(&r.subject_id, neutral_pose, e)
                    .ok_or_else(|| Error::MissingSource(vec![r.subject_id.clone()]))?;
                let src_img = dataset.image(src)?;
                let generated = pose_stage.generate(&[src_img.as_ref()], &[p], &mut rng)?.remove(0).clamped();
                let img = std::sync::Arc::new(generated);
                cache.insert(key, img.clone());
                img
            }
        };
        let mut rec = r.clone();
        rec.input = img;
        out.push(rec);
    }
    Ok(out)
}

pub const LOG_FILE: &str = "train_log.csv";

/// Training and evaluation records of one stage from the configured dataset:
/// a subject-disjoint split, paired for `stage`. Expression-stage inputs are
/// replaced by the pose stage's outputs when `train.stage1_checkpoint` is set.
pub fn stage_records(cfg: &RunConfig, ds: &Dataset, stage: StageKind) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    let (train_rows, eval_rows) = crate::data::split_subjects(&ds.rows, cfg.data.split_ratio, cfg.seed)?;
    let filter = crate::data::StageFilter::default();
    let mut train = ds.records(&train_rows, stage, filter, cfg.data.include_identity)?;
    let mut eval = ds.records(&eval_rows, stage, filter, cfg.data.include_identity)?;
    if let Some(ck) = &cfg.train.stage1_checkpoint {
        if stage != StageKind::Expression {
            return Err(Error::InvalidConfig("train.stage1_checkpoint only applies to the expression stage".into()));
        }
        let (pose, _) = load_model_expecting(ck, StageKind::Pose, Some(&ds.pose))?;
        train = substitute_stage1_inputs(ds, &train, &pose)?;
        eval = substitute_stage1_inputs(ds, &eval, &pose)?;
    }
    Ok((train, eval))
}

/// Trains one stage from `cfg` and writes the checkpoint, the training log
/// and the resolved configuration into `out`.
pub fn run_stage(cfg: &RunConfig, stage: StageKind, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dir = cfg.data.dir.as_ref().ok_or_else(|| Error::InvalidConfig("data.dir is required for training".into()))?;
    let ds = Dataset::open_dir(dir, cfg.data.image_size)?;
    let (train, eval) = stage_records(cfg, &ds, stage)?;
    let spec = StageSpec::new(stage, ds.stage_schema(stage), ds.image_size, &cfg.model, cfg.seed)?;
    let ctx = TrainContext::new(TrainConfig::from_run(cfg), CascadeNet::new(&cfg.cascade)?, ds.image_size)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.write_resolved(out)?;
    let log_path = out.join(LOG_FILE);
    let mut log = csv::Writer::from_path(&log_path)?;
    let mut log_err = None;
    log::info!("training {} stage: {} train / {} eval records, {} steps", stage.name(), train.len(), eval.len(), ctx.cfg.max_steps);
    let outcome = train_stage(&ctx, StageModel::new(spec)?, &train, &eval, |r| {
        if log_err.is_none() {
            log_err = log.serialize(r).and_then(|_| log.flush().map_err(Into::into)).err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    save_state(out, &outcome.state, &cfg.hash(), cfg.seed, &outcome.metrics)?;
    Ok(outcome)
}

/// Generator outputs for a batch tensor (evaluation mode, no graph).
pub fn generate_tensor(model: &StageModel, x: &Tensor, classes: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<Image>> {
    let conds = classes.iter().map(|&c| ConditionVector::one_hot(c, model.num_classes())).collect::<Result<Vec<_>>>()?;
    let c = condition_batch(&conds, model.num_classes())?;
    let y = no_grad(|| model.generator.generate(x, &c, Mode::Eval, rng, &mut Vec::new()))?;
    Ok(tensor_images(&y))
}
