//! Command-line entry point: `synth-data`, `train`, `generate`, `evaluate`, `ablate`.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ablation::{run_ablation, table_from_runs, TABLE_STEM};
use crate::config::{PipelineOrder, RunConfig};
use crate::data::{AttributeSchema, Dataset, StageKind};
use crate::error::Error;
use crate::evaluation::{evaluate_pairs, read_pairs};
use crate::image::Image;
use crate::pipeline::{compose, write_expansion, PAIRS_FILE};
use crate::synth::{synth_generate, SynthSpec};
use crate::training::{load_model_expecting, run_stage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pipgan", version, about = "Two-stage conditional GAN for pose and expression face synthesis")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic glyph dataset.
    SynthData(SynthArgs),
    /// Train one stage.
    Train(TrainArgs),
    /// Expand one neutral image over the (pose, expression) grid.
    Generate(GenerateArgs),
    /// Score generated images against targets.
    Evaluate(EvaluateArgs),
    /// Build the method comparison table.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub subjects: usize,
    #[arg(long, default_value_t = 5)]
    pub poses: usize,
    #[arg(long, default_value_t = 7)]
    pub exprs: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StageArg {
    Pose,
    Expression,
    Joint,
}

impl From<StageArg> for StageKind {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Pose => StageKind::Pose,
            StageArg::Expression => StageKind::Expression,
            StageArg::Joint => StageKind::Joint,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub stage: StageArg,
    /// Dataset directory (holding `dataset.json`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Pose-stage checkpoint whose outputs replace the expression stage's inputs.
    #[arg(long)]
    pub stage1_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OrderArg {
    #[value(name = "PE", alias = "pe")]
    Pe,
    #[value(name = "EP", alias = "ep")]
    Ep,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub order: Option<OrderArg>,
    #[arg(long)]
    pub pose_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub expression_checkpoint: Option<PathBuf>,
    /// Neutral input image.
    #[arg(long, required_unless_present = "subject")]
    pub input: Option<PathBuf>,
    /// Subject of `--data` to expand (its neutral image is the input and
    /// its other images become targets).
    #[arg(long, requires = "data")]
    pub subject: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Pose targets: a count (first N non-neutral categories) or comma-separated names.
    #[arg(long)]
    pub poses: Option<String>,
    /// Expression targets, same forms as `--poses`.
    #[arg(long)]
    pub exprs: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub generated: PathBuf,
    /// Target directory (defaults to the generated directory when it holds a pairs list).
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// `pair_id,generated,target` list.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Run directories, each holding a `report.csv`.
    pub runs: Vec<PathBuf>,
    /// Train and score all eight configurations instead.
    #[arg(long, conflicts_with = "runs")]
    pub train: bool,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.apply_env();
    Ok(cfg)
}

fn dispatch(cli: Cli) -> CmdResult {
    let mut cfg = load_config(&cli)?;
    let out = cli.out.clone();
    match cli.command {
        Command::SynthData(a) => synth_data(&mut cfg, &a, &out),
        Command::Train(a) => train(&mut cfg, &a, &out),
        Command::Generate(a) => generate(&mut cfg, &a, &out),
        Command::Evaluate(a) => evaluate(&cfg, &a, &out),
        Command::Ablate(a) => ablate(&mut cfg, &a, &out),
    }
}

fn synth_data(cfg: &mut RunConfig, a: &SynthArgs, out: &Path) -> CmdResult {
    let spec = SynthSpec { n_subjects: a.subjects, k_pose: a.poses, k_expr: a.exprs, image_size: a.size, seed: cfg.seed };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let manifest = synth_generate(&spec, out)?;
    cfg.data.dir = Some(out.to_path_buf());
    cfg.data.image_size = Some(a.size);
    cfg.write_resolved(out)?;
    println!("wrote {} images and {}", a.subjects * a.poses * a.exprs, manifest.display());
    Ok(())
}

fn train(cfg: &mut RunConfig, a: &TrainArgs, out: &Path) -> CmdResult {
    if let Some(d) = &a.data {
        cfg.data.dir = Some(d.clone());
    }
    if let Some(n) = a.max_steps {
        cfg.train.max_steps = n;
    }
    if let Some(n) = a.batch_size {
        cfg.train.batch_size = n;
    }
    if let Some(p) = &a.stage1_checkpoint {
        cfg.train.stage1_checkpoint = Some(p.clone());
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if cfg.data.dir.is_none() {
        return Err(Failure::Usage("a dataset is required (--data or data.dir)".into()));
    }
    let outcome = run_stage(cfg, a.stage.into(), out)?;
    if let Some(last) = outcome.log.last() {
        println!("{} steps, final total loss {:.5}, l1 {:.5}", last.step, last.total, last.loss_l1);
    }
    if let Some(m) = outcome.metrics.last() {
        println!("eval l1 {:.5}, psnr {:.4} dB, mse {:.5}, rmse {:.4}", m.l1, m.psnr_db, m.mse, m.rmse);
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}

/// `N` (first N non-neutral categories) or a comma-separated name list.
fn parse_targets(schema: &AttributeSchema, spec: Option<&str>, fallback: &[String]) -> std::result::Result<Vec<usize>, Failure> {
    let non_neutral: Vec<usize> = (0..schema.len()).filter(|&i| i != schema.neutral_index).collect();
    match spec {
        None => crate::pipeline::resolve_targets(schema, fallback).map_err(|e| Failure::Usage(e.to_string())),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 && n <= non_neutral.len() => Ok(non_neutral[..n].to_vec()),
            Ok(n) => Err(Failure::Usage(format!("{} count {n} must be in 1..={}", schema.name, non_neutral.len()))),
            Err(_) => s.split(',').map(|n| schema.index_of(n.trim()).map_err(|e| Failure::Usage(e.to_string()))).collect(),
        },
    }
}

fn generate(cfg: &mut RunConfig, a: &GenerateArgs, out: &Path) -> CmdResult {
    let p = &mut cfg.pipeline;
    if let Some(o) = a.order {
        p.order = match o {
            OrderArg::Pe => PipelineOrder::PE,
            OrderArg::Ep => PipelineOrder::EP,
        };
    }
    if let Some(c) = &a.pose_checkpoint {
        p.pose_checkpoint = Some(c.clone());
    }
    if let Some(c) = &a.expression_checkpoint {
        p.expression_checkpoint = Some(c.clone());
    }
    if p.pose_checkpoint.is_none() || p.expression_checkpoint.is_none() {
        return Err(Failure::Usage("--pose-checkpoint and --expression-checkpoint (or pipeline.*_checkpoint) are required".into()));
    }
    if let Some(d) = &a.data {
        cfg.data.dir = Some(d.clone());
    }
    let (pose, _) = load_model_expecting(p.pose_checkpoint.as_ref().expect("checked"), StageKind::Pose, None)?;
    let (expression, _) = load_model_expecting(p.expression_checkpoint.as_ref().expect("checked"), StageKind::Expression, None)?;
    let (ps, es) = (pose.spec.schema.clone(), expression.spec.schema.clone());
    let pose_targets = parse_targets(&ps, a.poses.as_deref(), &p.pose_targets)?;
    let expr_targets = parse_targets(&es, a.exprs.as_deref(), &p.expression_targets)?;
    let order = p.order;
    let model = compose(order, pose, expression, p.neutral_passthrough)?;
    let size = model.image_size();

    let dataset = match &cfg.data.dir {
        Some(d) if a.subject.is_some() => Some(Dataset::open_dir(d, Some(size))?),
        _ => None,
    };
    let (subject, input) = match (&a.subject, &a.input) {
        (Some(s), _) => {
            let ds = dataset.as_ref().expect("--subject requires --data");
            let row = ds
                .find(s, ds.pose.neutral_index, ds.expression.neutral_index)
                .ok_or_else(|| Error::MissingSource(vec![s.clone()]))?;
            (s.clone(), ds.image(row)?.as_ref().clone())
        }
        (None, Some(path)) => {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
            (stem, Image::load(path, size)?)
        }
        (None, None) => return Err(Failure::Usage("--input or --subject is required".into())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let exp = model.expand(&input, &pose_targets, &expr_targets, &mut rng)?;
    let stage1 = Some(if order == PipelineOrder::PE { StageKind::Pose } else { StageKind::Expression });
    let written = write_expansion(out, &subject, &exp, &ps, &es, stage1, dataset.as_ref())?;
    cfg.write_resolved(out)?;
    println!("{} order: wrote {} images and {}", model.order_name(), written.outputs.len(), written.contact_sheet.display());
    Ok(())
}

fn evaluate(cfg: &RunConfig, a: &EvaluateArgs, out: &Path) -> CmdResult {
    let listed = a.generated.join(PAIRS_FILE);
    let (targets, pairs) = match (&a.targets, &a.pairs) {
        (t, Some(p)) => (t.clone().unwrap_or_else(|| a.generated.clone()), Some(read_pairs(p)?)),
        (Some(t), None) => (t.clone(), None),
        (None, None) if listed.exists() => (a.generated.clone(), Some(read_pairs(&listed)?)),
        (None, None) => return Err(Failure::Usage("--targets is required when the generated directory has no pairs list".into())),
    };
    let report = evaluate_pairs(&a.generated, &targets, pairs.as_deref())?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    report.write_csv(&out.join("report.csv"))?;
    cfg.write_resolved(out)?;
    let g = &report.aggregate;
    println!("{} pairs: psnr {:.4} dB, mse {:.5}, rmse {:.4}", report.n_pairs, g.psnr_db, g.mse, g.rmse);
    Ok(())
}

fn ablate(cfg: &mut RunConfig, a: &AblateArgs, out: &Path) -> CmdResult {
    let table = if a.train {
        if let Some(d) = &a.data {
            cfg.data.dir = Some(d.clone());
        }
        if let Some(n) = a.max_steps {
            cfg.train.max_steps = n;
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        if cfg.data.dir.is_none() {
            return Err(Failure::Usage("a dataset is required (--data or data.dir)".into()));
        }
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        cfg.write_resolved(out)?;
        run_ablation(cfg, out)?
    } else {
        if a.runs.is_empty() {
            return Err(Failure::Usage("give run directories or --train".into()));
        }
        let t = table_from_runs(&a.runs)?;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        t.write(out, TABLE_STEM)?;
        cfg.write_resolved(out)?;
        t
    };
    print!("{}", table.to_text());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["pipgan", "train", "--stage", "nose"]), EXIT_USAGE);
        assert_eq!(run(["pipgan", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["pipgan", "ablate"]), EXIT_USAGE);
    }

    #[test]
    fn target_specs() {
        let s = AttributeSchema::new("pose", (0..5).map(|i| format!("pose{i}")).collect(), 2).unwrap();
        assert_eq!(parse_targets(&s, Some("3"), &[]).unwrap(), vec![0, 1, 3]);
        assert_eq!(parse_targets(&s, Some("pose4,pose0"), &[]).unwrap(), vec![4, 0]);
        assert_eq!(parse_targets(&s, None, &[]).unwrap(), vec![0, 1, 3, 4]);
        assert!(parse_targets(&s, Some("9"), &[]).is_err());
        assert!(parse_targets(&s, Some("pose9"), &[]).is_err());
    }
}
