//! Two-stage conditional image-to-image GAN for synthesizing faces under a
//! target pose and expression.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod training;

pub use config::{PipelineOrder, RunConfig};
pub use data::{AttributeSchema, ConditionVector, Dataset, SampleRecord, StageKind};
pub use error::{Error, Result};
pub use evaluation::{image_metrics, MetricsReport};
pub use image::Image;
pub use pipeline::{compose, PipelineModel};
pub use training::{StageModel, StageSpec, TrainConfig};
