//! The eight-method comparison: loss-term ablations over both pipeline
//! orders plus a single-generator baseline trained with adversarial + L1 only.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{PipelineOrder, RunConfig};
use crate::data::{split_subjects, subjects, Dataset, StageKind};
use crate::error::{Error, Result};
use crate::evaluation::{ablation_report, image_metrics, AblationTable, MetricsReport, PairMetrics};
use crate::losses::LossWeights;
use crate::pipeline::{compose, resolve_targets, write_expansion, PipelineModel};
use crate::training::{load_model, run_stage, StageModel};

pub const REPORT_FILE: &str = "report.csv";
pub const METHOD_FILE: &str = "method.txt";
pub const TABLE_STEM: &str = "ablation";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    Pipeline(PipelineOrder),
    /// One generator conditioned on the joint (pose, expression) class.
    Joint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationMethod {
    pub name: &'static str,
    pub structure: Structure,
    pub weights: LossWeights,
}

impl AblationMethod {
    /// Directory-safe name.
    pub fn slug(&self) -> String {
        self.name.to_ascii_lowercase().replace(" + ", "_").replace('+', "_").replace(' ', "_")
    }
}

/// The eight configurations in report order, derived from `base` weights.
pub fn ablation_methods(base: LossWeights) -> Vec<AblationMethod> {
    let without = |cascade: bool, gp: bool| LossWeights {
        cascade: if cascade { base.cascade } else { 0.0 },
        gradient_penalty: if gp { base.gradient_penalty } else { 0.0 },
        classification: 0.0,
        ..base
    };
    use PipelineOrder::{EP, PE};
    use Structure::{Joint, Pipeline};
    vec![
        AblationMethod { name: "Ours", structure: Pipeline(PE), weights: base },
        AblationMethod { name: "PE+Cascade+GP", structure: Pipeline(PE), weights: without(true, true) },
        AblationMethod { name: "PE+Cascade", structure: Pipeline(PE), weights: without(true, false) },
        AblationMethod { name: "PE+GP", structure: Pipeline(PE), weights: without(false, true) },
        AblationMethod { name: "PE", structure: Pipeline(PE), weights: without(false, false) },
        AblationMethod { name: "EP+GP", structure: Pipeline(EP), weights: without(false, true) },
        AblationMethod { name: "EP", structure: Pipeline(EP), weights: without(false, false) },
        AblationMethod {
            name: "Pix2pix",
            structure: Joint,
            weights: LossWeights { adversarial: base.adversarial, cascade: 0.0, gradient_penalty: 0.0, classification: 0.0, l1: base.l1 },
        },
    ]
}

fn weights_key(w: &LossWeights) -> String {
    w.as_array().iter().map(|v| format!("{v}")).collect::<Vec<_>>().join("-")
}

/// Trains (or reuses) every stage the eight methods need, expands each
/// held-out subject's neutral image over the configured target sets, scores
/// the grid against ground truth and writes per-method reports plus the
/// table under `out`.
pub fn run_ablation(cfg: &RunConfig, out: &Path) -> Result<AblationTable> {
    cfg.validate()?;
    let dir = cfg.data.dir.as_ref().ok_or_else(|| Error::InvalidConfig("data.dir is required for the ablation".into()))?;
    let ds = Dataset::open_dir(dir, cfg.data.image_size)?;
    let (_, eval_rows) = split_subjects(&ds.rows, cfg.data.split_ratio, cfg.seed)?;
    let eval_subjects = subjects(&eval_rows);
    let pose_set = resolve_targets(&ds.pose, &cfg.pipeline.pose_targets)?;
    let expr_set = resolve_targets(&ds.expression, &cfg.pipeline.expression_targets)?;
    let neutral = (ds.pose.neutral_index, ds.expression.neutral_index);

    let mut trained: HashMap<(StageKind, String), StageModel> = HashMap::new();
    let mut stage = |kind: StageKind, w: &LossWeights| -> Result<StageModel> {
        let key = (kind, weights_key(w));
        if let Some(m) = trained.get(&key) {
            return Ok(m.clone());
        }
        let mut c = cfg.clone();
        c.loss.set_weights(*w);
        c.train.stage1_checkpoint = None;
        let stage_dir = out.join("stages").join(format!("{}_{}", kind.name(), trained.len()));
        log::info!("ablation: training {} stage with weights {:?} into {}", kind.name(), w.as_array(), stage_dir.display());
        run_stage(&c, kind, &stage_dir)?;
        let (m, _) = load_model(&stage_dir)?;
        trained.insert(key, m.clone());
        Ok(m)
    };

    let mut entries = Vec::new();
    for method in ablation_methods(cfg.loss.weights()) {
        let model = match method.structure {
            Structure::Pipeline(order) => {
                compose(order, stage(StageKind::Pose, &method.weights)?, stage(StageKind::Expression, &method.weights)?, cfg.pipeline.neutral_passthrough)?
            }
            Structure::Joint => PipelineModel::Joint {
                model: stage(StageKind::Joint, &method.weights)?,
                expression_classes: ds.expression.len(),
                neutral,
                neutral_passthrough: cfg.pipeline.neutral_passthrough,
            },
        };
        let method_dir = out.join("methods").join(method.slug());
        let report = score_method(&model, &ds, &eval_subjects, &pose_set, &expr_set, &method_dir, cfg.seed)?;
        std::fs::write(method_dir.join(METHOD_FILE), method.name).map_err(|e| Error::io(&method_dir, e))?;
        report.write_csv(&method_dir.join(REPORT_FILE))?;
        log::info!("ablation: {} psnr {:.4} dB over {} pairs", method.name, report.aggregate.psnr_db, report.n_pairs);
        entries.push((method.name.to_string(), report));
    }
    let table = ablation_report(&entries)?;
    table.write(out, TABLE_STEM)?;
    Ok(table)
}

/// Expands every subject and scores each cell that has a ground-truth image.
pub fn score_method(
    model: &PipelineModel,
    ds: &Dataset,
    subject_ids: &[String],
    pose_set: &[usize],
    expr_set: &[usize],
    out: &Path,
    seed: u64,
) -> Result<MetricsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pn, en) = (ds.pose.neutral_index, ds.expression.neutral_index);
    let mut per = Vec::new();
    for subject in subject_ids {
        let row = ds.find(subject, pn, en).ok_or_else(|| Error::MissingSource(vec![subject.clone()]))?;
        let exp = model.expand(&*ds.image(row)?, pose_set, expr_set, &mut rng)?;
        let stage1 = match model {
            PipelineModel::TwoStage { order: PipelineOrder::PE, .. } => Some(StageKind::Pose),
            PipelineModel::TwoStage { order: PipelineOrder::EP, .. } => Some(StageKind::Expression),
            PipelineModel::Joint { .. } => None,
        };
        write_expansion(&out.join(subject), subject, &exp, &ds.pose, &ds.expression, stage1, Some(ds))?;
        for cell in &exp.outputs {
            if let Some(t) = ds.find(subject, cell.pose, cell.expression) {
                let m = image_metrics(&cell.image.clamped(), &*ds.image(t)?)?;
                per.push(PairMetrics {
                    pair_id: format!("{subject}_{}_{}", ds.pose.categories[cell.pose], ds.expression.categories[cell.expression]),
                    psnr_db: m.psnr_db,
                    mse: m.mse,
                    rmse: m.rmse,
                });
            }
        }
    }
    MetricsReport::from_pairs(per)
}

/// Builds the table from existing run directories, each holding a
/// `report.csv` and optionally a `method.txt` naming it (the directory name
/// is used otherwise).
pub fn table_from_runs(runs: &[PathBuf]) -> Result<AblationTable> {
    if runs.is_empty() {
        return Err(Error::Empty("run directory list".into()));
    }
    let mut entries = Vec::with_capacity(runs.len());
    for dir in runs {
        let name = match std::fs::read_to_string(dir.join(METHOD_FILE)) {
            Ok(s) => s.trim().to_string(),
            Err(_) => dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string()),
        };
        entries.push((name, MetricsReport::read_csv(&dir.join(REPORT_FILE))?));
    }
    ablation_report(&entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_methods_in_table_order() {
        let m = ablation_methods(LossWeights::standard());
        let names: Vec<&str> = m.iter().map(|m| m.name).collect();
        assert_eq!(names, ["Ours", "PE+Cascade+GP", "PE+Cascade", "PE+GP", "PE", "EP+GP", "EP", "Pix2pix"]);
        assert_eq!(m[0].weights.as_array(), [1.0, 1.0, 1.0, 10.0, 50.0]);
        assert_eq!(m[1].weights.as_array(), [1.0, 1.0, 1.0, 0.0, 50.0]);
        assert_eq!(m[2].weights.as_array(), [1.0, 1.0, 0.0, 0.0, 50.0]);
        assert_eq!(m[3].weights.as_array(), [1.0, 0.0, 1.0, 0.0, 50.0]);
        assert_eq!(m[4].weights.as_array(), [1.0, 0.0, 0.0, 0.0, 50.0]);
        assert_eq!((m[5].weights, m[6].weights), (m[3].weights, m[4].weights));
        assert_eq!(m[7].weights.as_array(), [1.0, 0.0, 0.0, 0.0, 50.0]);
        assert_eq!(m[7].structure, Structure::Joint);
        // the two EP rows reuse the PE stage weights: five distinct pipeline variants
        let distinct: std::collections::HashSet<String> = m[..7].iter().map(|m| weights_key(&m.weights)).collect();
        assert_eq!(distinct.len(), 5);
        assert_eq!(m[1].slug(), "pe_cascade_gp");
    }

    #[test]
    fn empty_run_list_rejected() {
        assert!(matches!(table_from_runs(&[]), Err(Error::Empty(_))));
    }
}
