//! Run configuration (TOML), its canonical hash and environment overrides.
//!
//! Keys, grouped by table:
//!
//! | key | default |
//! |---|---|
//! | `seed` | 0 |
//! | `data.dir` | none |
//! | `data.image_size` | from `dataset.json` |
//! | `data.split_ratio` | 0.8 |
//! | `data.include_identity` | false |
//! | `model.generator_channels` | 64,128,256,512,512,512 truncated to depth |
//! | `model.discriminator_channels` | 64,128,256,512 truncated to depth |
//! | `model.width_divisor` | 1 |
//! | `model.noise` | `"off"` (or `"dropout"`) |
//! | `model.dropout` | 0.5 |
//! | `model.init_std` | 0.02 |
//! | `model.cond_init_std` | 0.2 |
//! | `train.learning_rate` | 0.0002 |
//! | `train.adam_beta1` / `train.adam_beta2` | 0.5 / 0.999 |
//! | `train.batch_size` | 8 |
//! | `train.max_steps` | 20000 |
//! | `train.d_steps_per_g_step` | 1 |
//! | `train.eval_every` | 500 |
//! | `train.bn_momentum` | 0.1 |
//! | `train.stage1_checkpoint` | none (teacher forcing) |
//! | `loss.xi1` .. `loss.xi5` | 1, 1, 1, 10, 50 |
//! | `loss.lambda_mode` | `"uniform"` (or `"inverse_size"`) |
//! | `loss.adversarial_form` | `"non_saturating"` (or `"minimax"`) |
//! | `loss.gp_in_generator` | false |
//! | `cascade.weights_path` | none (seeded random features) |
//! | `cascade.channels` | 16,32,64,64,64 |
//! | `cascade.seed` | 24301 |
//! | `pipeline.order` | `"PE"` |
//! | `pipeline.pose_checkpoint` / `pipeline.expression_checkpoint` | none |
//! | `pipeline.pose_targets` / `pipeline.expression_targets` | every non-neutral category |
//! | `pipeline.neutral_passthrough` | true |
//!
//! `PIPGAN_CASCADE_WEIGHTS` overrides `cascade.weights_path`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{AdversarialForm, LambdaMode, LossWeights};
use crate::networks::{CascadeConfig, NoiseMode};
use crate::optim::AdamConfig;

pub const CASCADE_WEIGHTS_ENV: &str = "PIPGAN_CASCADE_WEIGHTS";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub image_size: Option<usize>,
    pub split_ratio: f64,
    pub include_identity: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { dir: None, image_size: None, split_ratio: 0.8, include_identity: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub generator_channels: Option<Vec<usize>>,
    pub discriminator_channels: Option<Vec<usize>>,
    pub width_divisor: usize,
    pub noise: NoiseMode,
    pub dropout: f64,
    pub init_std: f64,
    pub cond_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            generator_channels: None,
            discriminator_channels: None,
            width_divisor: 1,
            noise: NoiseMode::Off,
            dropout: 0.5,
            init_std: 0.02,
            cond_init_std: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub d_steps_per_g_step: usize,
    pub eval_every: u64,
    pub bn_momentum: f64,
    /// Pose-stage checkpoint whose outputs replace the real inputs when
    /// training the expression stage.
    pub stage1_checkpoint: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainSettings {
            learning_rate: adam.learning_rate,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            batch_size: 8,
            max_steps: 20_000,
            d_steps_per_g_step: 1,
            eval_every: 500,
            bn_momentum: 0.1,
            stage1_checkpoint: None,
        }
    }
}

impl TrainSettings {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.adam_beta1, beta2: self.adam_beta2, ..AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub xi4: f64,
    pub xi5: f64,
    pub lambda_mode: LambdaMode,
    pub adversarial_form: AdversarialForm,
    pub gp_in_generator: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::from_weights(LossWeights::standard())
    }
}

impl LossConfig {
    pub fn from_weights(w: LossWeights) -> Self {
        LossConfig {
            xi1: w.adversarial,
            xi2: w.cascade,
            xi3: w.gradient_penalty,
            xi4: w.classification,
            xi5: w.l1,
            lambda_mode: LambdaMode::default(),
            adversarial_form: AdversarialForm::default(),
            gp_in_generator: false,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { adversarial: self.xi1, cascade: self.xi2, gradient_penalty: self.xi3, classification: self.xi4, l1: self.xi5 }
    }

    pub fn set_weights(&mut self, w: LossWeights) {
        let keep = (self.lambda_mode, self.adversarial_form, self.gp_in_generator);
        *self = Self::from_weights(w);
        (self.lambda_mode, self.adversarial_form, self.gp_in_generator) = keep;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PipelineOrder {
    /// Pose stage first.
    #[default]
    PE,
    /// Expression stage first.
    EP,
}

impl PipelineOrder {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PE" => Ok(PipelineOrder::PE),
            "EP" => Ok(PipelineOrder::EP),
            o => Err(Error::InvalidConfig(format!("pipeline order `{o}` (PE|EP)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PipelineOrder::PE => "PE",
            PipelineOrder::EP => "EP",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub order: PipelineOrder,
    pub pose_checkpoint: Option<PathBuf>,
    pub expression_checkpoint: Option<PathBuf>,
    /// Category names; empty means every non-neutral category.
    pub pose_targets: Vec<String>,
    pub expression_targets: Vec<String>,
    pub neutral_passthrough: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            order: PipelineOrder::PE,
            pose_checkpoint: None,
            expression_checkpoint: None,
            pose_targets: Vec::new(),
            expression_targets: Vec::new(),
            neutral_passthrough: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub loss: LossConfig,
    pub cascade: CascadeConfig,
    pub pipeline: PipelineSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigParse { path: origin.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    /// Applies `PIPGAN_CASCADE_WEIGHTS` when set and non-empty.
    pub fn apply_env(&mut self) {
        self.apply_cascade_override(std::env::var_os(CASCADE_WEIGHTS_ENV).map(PathBuf::from));
    }

    pub fn apply_cascade_override(&mut self, path: Option<PathBuf>) {
        if let Some(p) = path.filter(|p| !p.as_os_str().is_empty()) {
            self.cascade.weights_path = Some(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("train.learning_rate must be > 0, got {}", t.learning_rate)));
        }
        if t.batch_size == 0 || t.max_steps == 0 || t.d_steps_per_g_step == 0 {
            return Err(Error::InvalidConfig("train.batch_size, train.max_steps and train.d_steps_per_g_step must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&t.adam_beta1) || !(0.0..1.0).contains(&t.adam_beta2) {
            return Err(Error::InvalidConfig("adam betas must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&t.bn_momentum) {
            return Err(Error::InvalidConfig(format!("train.bn_momentum {} not in [0, 1]", t.bn_momentum)));
        }
        if self.model.width_divisor == 0 {
            return Err(Error::InvalidConfig("model.width_divisor must be >= 1".into()));
        }
        self.loss.weights().validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is TOML-serializable")
    }

    /// SHA-256 (hex) of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config is JSON-serializable");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(RESOLVED_CONFIG_FILE);
        let text = format!("# config hash {}\n{}", self.hash(), self.to_toml());
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_standard_settings() {
        let c = RunConfig::default();
        assert_eq!(c.train.learning_rate, 0.0002);
        assert_eq!(c.loss.weights(), LossWeights::standard());
        assert_eq!(c.pipeline.order, PipelineOrder::PE);
        assert_eq!(c.train.d_steps_per_g_step, 1);
    }

    #[test]
    fn parses_dotted_keys() {
        let text = r#"
seed = 5
[loss]
xi4 = 3.0
lambda_mode = "inverse_size"
[train]
batch_size = 4
[cascade]
weights_path = "/w.bin"
[pipeline]
order = "EP"
"#;
        let c = RunConfig::from_toml_str(text, Path::new("c.toml")).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.loss.weights().classification, 3.0);
        assert_eq!(c.loss.lambda_mode, LambdaMode::InverseSize);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.cascade.weights_path.as_deref(), Some(Path::new("/w.bin")));
        assert_eq!(c.pipeline.order, PipelineOrder::EP);
    }

    #[test]
    fn unknown_and_invalid_keys_rejected() {
        assert!(matches!(RunConfig::from_toml_str("[loss]\nxi6 = 1.0", Path::new("c")), Err(Error::ConfigParse { .. })));
        assert!(RunConfig::from_toml_str("[loss]\nxi1 = -1.0", Path::new("c")).is_err());
        assert!(RunConfig::from_toml_str("[train]\nlearning_rate = 0.0", Path::new("c")).is_err());
    }

    #[test]
    fn toml_roundtrip_and_hash() {
        let mut c = RunConfig::default();
        c.data.dir = Some("d".into());
        c.pipeline.pose_targets = vec!["pose0".into()];
        let back = RunConfig::from_toml_str(&c.to_toml(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn cascade_override() {
        let mut c = RunConfig::default();
        c.apply_cascade_override(Some("".into()));
        assert_eq!(c.cascade.weights_path, None);
        c.apply_cascade_override(Some("/x".into()));
        assert_eq!(c.cascade.weights_path.as_deref(), Some(Path::new("/x")));
    }
}
