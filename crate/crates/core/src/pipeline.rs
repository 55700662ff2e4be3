//! Chaining a pose stage and an expression stage, and expanding one neutral
//! image into the full (pose, expression) grid.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineOrder, RunConfig};
use crate::data::{AttributeSchema, Dataset, StageKind};
use crate::error::{Error, Result};
use crate::evaluation::{write_pairs, PairEntry};
use crate::image::{contact_sheet, Image};
use crate::training::{load_model_expecting, StageModel};

pub const PAIRS_FILE: &str = "pairs.csv";
pub const TARGET_DIR: &str = "targets";
pub const INTERMEDIATE_DIR: &str = "intermediate";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub order: PipelineOrder,
    /// Checkpoint of the stage that runs first (pose for PE, expression for EP).
    pub stage1_checkpoint: PathBuf,
    pub stage2_checkpoint: PathBuf,
    pub pose_targets: Vec<usize>,
    pub expression_targets: Vec<usize>,
    pub neutral_passthrough: bool,
}

impl PipelineConfig {
    /// Reads the pipeline section, resolving target names against the schemas.
    pub fn from_run(cfg: &RunConfig, pose: &AttributeSchema, expression: &AttributeSchema) -> Result<Self> {
        let p = &cfg.pipeline;
        let (pose_ck, expr_ck) = match (&p.pose_checkpoint, &p.expression_checkpoint) {
            (Some(a), Some(b)) => (a.clone(), b.clone()),
            _ => return Err(Error::InvalidConfig("pipeline.pose_checkpoint and pipeline.expression_checkpoint are required".into())),
        };
        let (stage1_checkpoint, stage2_checkpoint) = match p.order {
            PipelineOrder::PE => (pose_ck, expr_ck),
            PipelineOrder::EP => (expr_ck, pose_ck),
        };
        Ok(PipelineConfig {
            order: p.order,
            stage1_checkpoint,
            stage2_checkpoint,
            pose_targets: resolve_targets(pose, &p.pose_targets)?,
            expression_targets: resolve_targets(expression, &p.expression_targets)?,
            neutral_passthrough: p.neutral_passthrough,
        })
    }
}

/// Category names to indices; an empty list means every non-neutral category.
pub fn resolve_targets(schema: &AttributeSchema, names: &[String]) -> Result<Vec<usize>> {
    if names.is_empty() {
        return Ok((0..schema.len()).filter(|&i| i != schema.neutral_index).collect());
    }
    names.iter().map(|n| schema.index_of(n)).collect()
}

/// Composed generators, immutable after construction.
#[derive(Clone, Debug)]
pub enum PipelineModel {
    TwoStage { order: PipelineOrder, pose: StageModel, expression: StageModel, neutral_passthrough: bool },
    /// One generator conditioned on the joint (pose, expression) class.
    Joint { model: StageModel, expression_classes: usize, neutral: (usize, usize), neutral_passthrough: bool },
}

/// Chains two stage models. Both must share the image size.
pub fn compose(order: PipelineOrder, pose: StageModel, expression: StageModel, neutral_passthrough: bool) -> Result<PipelineModel> {
    if pose.spec.stage != StageKind::Pose || expression.spec.stage != StageKind::Expression {
        return Err(Error::SchemaMismatch(format!(
            "pipeline needs a pose and an expression stage, got {} and {}",
            pose.spec.stage.name(),
            expression.spec.stage.name()
        )));
    }
    if pose.image_size() != expression.image_size() {
        return Err(Error::SizeMismatch(pose.image_size(), expression.image_size()));
    }
    Ok(PipelineModel::TwoStage { order, pose, expression, neutral_passthrough })
}

/// Loads both checkpoints and checks that the target lists fit their schemas.
pub fn compose_config(cfg: &PipelineConfig) -> Result<PipelineModel> {
    let (k1, k2) = match cfg.order {
        PipelineOrder::PE => (StageKind::Pose, StageKind::Expression),
        PipelineOrder::EP => (StageKind::Expression, StageKind::Pose),
    };
    let (s1, _) = load_model_expecting(&cfg.stage1_checkpoint, k1, None)?;
    let (s2, _) = load_model_expecting(&cfg.stage2_checkpoint, k2, None)?;
    let (pose, expression) = if k1 == StageKind::Pose { (s1, s2) } else { (s2, s1) };
    check_targets(&pose.spec.schema, &cfg.pose_targets)?;
    check_targets(&expression.spec.schema, &cfg.expression_targets)?;
    compose(cfg.order, pose, expression, cfg.neutral_passthrough)
}

fn check_targets(schema: &AttributeSchema, targets: &[usize]) -> Result<()> {
    match targets.iter().find(|&&t| t >= schema.len()) {
        Some(t) => Err(Error::SchemaMismatch(format!("{} target {t} out of range for {} categories", schema.name, schema.len()))),
        None => Ok(()),
    }
}

/// One grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GridImage {
    pub pose: usize,
    pub expression: usize,
    pub image: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    /// Row-major over (pose, expression) in the order of the requested sets.
    pub outputs: Vec<GridImage>,
    /// First-stage outputs tagged by their class index.
    pub intermediates: Vec<(usize, Image)>,
    pub rows: usize,
    pub cols: usize,
}

impl PipelineModel {
    pub fn image_size(&self) -> usize {
        match self {
            PipelineModel::TwoStage { pose, .. } => pose.image_size(),
            PipelineModel::Joint { model, .. } => model.image_size(),
        }
    }

    pub fn order_name(&self) -> &'static str {
        match self {
            PipelineModel::TwoStage { order, .. } => order.name(),
            PipelineModel::Joint { .. } => "joint",
        }
    }

    /// Every (pose, expression) combination of the two sets from one neutral
    /// image. With passthrough on, a stage asked for its neutral category
    /// returns its input unchanged.
    pub fn expand(&self, image: &Image, pose_set: &[usize], expr_set: &[usize], rng: &mut ChaCha8Rng) -> Result<Expansion> {
        if pose_set.is_empty() || expr_set.is_empty() {
            return Err(Error::Empty("pipeline target set".into()));
        }
        let size = self.image_size();
        if image.shape() != [3, size, size] {
            return Err(Error::ShapeMismatch { context: "pipeline input".into(), expected: vec![3, size, size], actual: image.shape().to_vec() });
        }
        let mut outputs = Vec::with_capacity(pose_set.len() * expr_set.len());
        let mut intermediates = Vec::new();
        match self {
            PipelineModel::TwoStage { order, pose, expression, neutral_passthrough } => {
                let (first, second, first_set, second_set) = match order {
                    PipelineOrder::PE => (pose, expression, pose_set, expr_set),
                    PipelineOrder::EP => (expression, pose, expr_set, pose_set),
                };
                let mids = run_stage(first, image, first_set, *neutral_passthrough, rng)?;
                // grid[i][j]: i over the first stage's set, j over the second's
                let mut grid = Vec::with_capacity(first_set.len());
                for (&a, mid) in first_set.iter().zip(&mids) {
                    let mid = mid.clamped();
                    grid.push(run_stage(second, &mid, second_set, *neutral_passthrough, rng)?);
                    intermediates.push((a, mid));
                }
                for (pi, &p) in pose_set.iter().enumerate() {
                    for (ei, &e) in expr_set.iter().enumerate() {
                        let img = match order {
                            PipelineOrder::PE => grid[pi][ei].clone(),
                            PipelineOrder::EP => grid[ei][pi].clone(),
                        };
                        outputs.push(GridImage { pose: p, expression: e, image: img });
                    }
                }
            }
            PipelineModel::Joint { model, expression_classes, neutral, neutral_passthrough } => {
                let mut classes = Vec::new();
                for &p in pose_set {
                    for &e in expr_set {
                        classes.push(p * expression_classes + e);
                    }
                }
                let inputs = vec![image; classes.len()];
                let imgs = model.generate(&inputs, &classes, rng)?;
                for (&c, img) in classes.iter().zip(imgs) {
                    let (p, e) = (c / expression_classes, c % expression_classes);
                    let img = if *neutral_passthrough && (p, e) == *neutral { image.clone() } else { img };
                    outputs.push(GridImage { pose: p, expression: e, image: img });
                }
            }
        }
        Ok(Expansion { outputs, intermediates, rows: pose_set.len(), cols: expr_set.len() })
    }
}

fn run_stage(stage: &StageModel, input: &Image, classes: &[usize], passthrough: bool, rng: &mut ChaCha8Rng) -> Result<Vec<Image>> {
    let neutral = stage.spec.schema.neutral_index;
    let inputs = vec![input; classes.len()];
    let mut out = stage.generate(&inputs, classes, rng)?;
    if passthrough {
        for (img, &c) in out.iter_mut().zip(classes) {
            if c == neutral {
                *img = input.clone();
            }
        }
    }
    Ok(out)
}

/// File stem of one grid cell.
pub fn output_name(subject: &str, pose: &AttributeSchema, expression: &AttributeSchema, p: usize, e: usize) -> String {
    format!("{subject}_{}_{}.png", pose.categories[p], expression.categories[e])
}

/// Files written by [`write_expansion`].
#[derive(Clone, Debug, Default)]
pub struct WrittenGrid {
    pub outputs: Vec<PathBuf>,
    pub contact_sheet: PathBuf,
    pub pairs: Vec<PairEntry>,
}

/// Writes each cell as `{subject}_{pose}_{expr}.png`, the contact sheet (rows
/// = poses, columns = expressions), the first-stage images under
/// `intermediate/` and, when `dataset` holds the subject's ground truth, the
/// matching targets under `targets/` plus a pairs list.
pub fn write_expansion(
    dir: &Path,
    subject: &str,
    exp: &Expansion,
    pose: &AttributeSchema,
    expression: &AttributeSchema,
    stage1: Option<StageKind>,
    dataset: Option<&Dataset>,
) -> Result<WrittenGrid> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = WrittenGrid::default();
    for cell in &exp.outputs {
        let name = output_name(subject, pose, expression, cell.pose, cell.expression);
        let path = dir.join(&name);
        cell.image.save_png(&path)?;
        written.outputs.push(path);
        if let Some(ds) = dataset {
            if let Some(row) = ds.find(subject, cell.pose, cell.expression) {
                let tgt = ds.image(row)?;
                let tdir = dir.join(TARGET_DIR);
                std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
                tgt.save_png(&tdir.join(&name))?;
                written.pairs.push(PairEntry {
                    pair_id: name.trim_end_matches(".png").to_string(),
                    generated: name.clone().into(),
                    target: PathBuf::from(TARGET_DIR).join(&name),
                });
            }
        }
    }
    let tiles: Vec<Image> = exp.outputs.iter().map(|c| c.image.clamped()).collect();
    written.contact_sheet = dir.join(format!("{subject}_sheet.png"));
    contact_sheet(&tiles, exp.rows, exp.cols)?.save_png(&written.contact_sheet)?;
    if let Some(kind) = stage1 {
        let idir = dir.join(INTERMEDIATE_DIR);
        std::fs::create_dir_all(&idir).map_err(|e| Error::io(&idir, e))?;
        let schema = if kind == StageKind::Pose { pose } else { expression };
        for (c, img) in &exp.intermediates {
            img.save_png(&idir.join(format!("{subject}_{}.png", schema.categories[*c])))?;
        }
    }
    if !written.pairs.is_empty() {
        write_pairs(&dir.join(PAIRS_FILE), &written.pairs)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::training::StageSpec;
    use rand::SeedableRng;

    fn stage(kind: StageKind, k: usize, size: usize, seed: u64) -> StageModel {
        let schema = AttributeSchema::new(kind.name(), (0..k).map(|i| format!("{}{i}", &kind.name()[..1])).collect(), 0).unwrap();
        let model = ModelConfig { width_divisor: 16, ..ModelConfig::default() };
        StageModel::new(StageSpec::new(kind, schema, size, &model, seed).unwrap()).unwrap()
    }

    fn input(size: usize) -> Image {
        Image::new(size, size, (0..3 * size * size).map(|i| ((i * 7) % 13) as f64 / 13.0).collect()).unwrap()
    }

    #[test]
    fn grid_counts_and_tags() {
        let pe = compose(PipelineOrder::PE, stage(StageKind::Pose, 5, 16, 1), stage(StageKind::Expression, 7, 16, 2), true).unwrap();
        let ep = compose(PipelineOrder::EP, stage(StageKind::Pose, 5, 16, 1), stage(StageKind::Expression, 7, 16, 2), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for m in [&pe, &ep] {
            let out = m.expand(&input(16), &[1, 2, 3, 4], &[1, 2, 3, 4, 5, 6], &mut rng).unwrap();
            assert_eq!(out.outputs.len(), 24);
            let tags: Vec<(usize, usize)> = out.outputs.iter().map(|c| (c.pose, c.expression)).collect();
            let want: Vec<(usize, usize)> = (1..5).flat_map(|p| (1..7).map(move |e| (p, e))).collect();
            assert_eq!(tags, want);
        }
        assert!(pe.expand(&input(16), &[], &[1], &mut rng).is_err());
    }

    #[test]
    fn cells_use_their_own_conditions() {
        let (p, e) = (stage(StageKind::Pose, 5, 16, 1), stage(StageKind::Expression, 7, 16, 2));
        let pe = compose(PipelineOrder::PE, p.clone(), e.clone(), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = input(16);
        let out = pe.expand(&x, &[2, 4], &[3, 5], &mut rng).unwrap();
        let mid = p.generate(&[&x], &[4], &mut rng).unwrap().remove(0).clamped();
        let want = e.generate(&[&mid], &[3], &mut rng).unwrap().remove(0);
        assert_eq!(out.outputs[2].image, want);
        let again = pe.expand(&x, &[2, 4], &[3, 5], &mut rng).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn frontal_only_matches_single_stage() {
        let e = stage(StageKind::Expression, 6, 16, 2);
        let pe = compose(PipelineOrder::PE, stage(StageKind::Pose, 5, 16, 1), e.clone(), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = input(16);
        let out = pe.expand(&x, &[0], &[1, 2, 3, 4, 5], &mut rng).unwrap();
        assert_eq!(out.outputs.len(), 5);
        let single = e.generate(&vec![&x; 5], &[1, 2, 3, 4, 5], &mut rng).unwrap();
        let got: Vec<Image> = out.outputs.into_iter().map(|c| c.image).collect();
        assert_eq!(got, single);
    }

    #[test]
    fn incompatible_stages_rejected() {
        assert!(matches!(
            compose(PipelineOrder::PE, stage(StageKind::Pose, 5, 32, 1), stage(StageKind::Expression, 7, 16, 2), true),
            Err(Error::SizeMismatch(32, 16))
        ));
        assert!(matches!(
            compose(PipelineOrder::PE, stage(StageKind::Expression, 5, 16, 1), stage(StageKind::Expression, 7, 16, 2), true),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn writes_cells_and_sheet() {
        let pe = compose(PipelineOrder::PE, stage(StageKind::Pose, 5, 16, 1), stage(StageKind::Expression, 7, 16, 2), true).unwrap();
        let exp = pe.expand(&input(16), &[1, 2], &[1, 2, 3], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ps = AttributeSchema::new("pose", (0..5).map(|i| format!("p{i}")).collect(), 0).unwrap();
        let es = AttributeSchema::new("expression", (0..7).map(|i| format!("e{i}")).collect(), 0).unwrap();
        let w = write_expansion(dir.path(), "s1", &exp, &ps, &es, Some(StageKind::Pose), None).unwrap();
        assert_eq!(w.outputs.len(), 6);
        assert!(dir.path().join("s1_p2_e3.png").exists());
        let raw = image::open(&w.contact_sheet).unwrap();
        assert_eq!((raw.width(), raw.height()), (48, 32));
        assert!(dir.path().join(INTERMEDIATE_DIR).join("s1_p1.png").exists());
    }
}
