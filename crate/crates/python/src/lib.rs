//! Python bindings: images, metrics, synthetic data, stage training and
//! pipeline expansion.

use std::path::PathBuf;

use pipgan::ablation::table_from_runs;
use pipgan::config::{PipelineOrder, RunConfig};
use pipgan::data::StageKind;
use pipgan::evaluation::evaluate_pairs;
use pipgan::losses::{adversarial_d_loss, classification_loss};
use pipgan::synth::{synth_generate as synth, SynthSpec};
use pipgan::training::{load_model_expecting, run_stage};
use pipgan_autograd::Tensor;
use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: pipgan::Error) -> PyErr {
    match e {
        pipgan::Error::MissingFile(p) | pipgan::Error::MissingImage(p) => PyFileNotFoundError::new_err(p.display().to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// RGB image in [0, 1], channel-major.
#[pyclass(name = "Image", module = "pipgan_py", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: pipgan::Image,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: pipgan::Image::new(height, width, data).map_err(to_py)? })
    }

    #[staticmethod]
    fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { inner: pipgan::Image::filled(height, width, value) }
    }

    /// Loads an image file, resizing to `size` x `size`.
    #[staticmethod]
    fn load(path: PathBuf, size: usize) -> PyResult<Self> {
        Ok(Self { inner: pipgan::Image::load(&path, size).map_err(to_py)? })
    }

    fn save_png(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_png(&path).map_err(to_py)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn clamped(&self) -> Self {
        Self { inner: self.inner.clamped() }
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.height(), self.inner.width())
    }
}

/// Returns `(psnr_db, mse, rmse)` for one generated/target pair.
#[pyfunction]
fn image_metrics(generated: &PyImage, target: &PyImage) -> PyResult<(f64, f64, f64)> {
    let m = pipgan::image_metrics(&generated.inner, &target.inner).map_err(to_py)?;
    Ok((m.psnr_db, m.mse, m.rmse))
}

/// Scores every generated image against the same-named target; returns the
/// aggregate `(psnr_db, mse, rmse, n_pairs)`.
#[pyfunction]
fn evaluate_dirs(generated: PathBuf, targets: PathBuf) -> PyResult<(f64, f64, f64, usize)> {
    let r = evaluate_pairs(&generated, &targets, None).map_err(to_py)?;
    Ok((r.aggregate.psnr_db, r.aggregate.mse, r.aggregate.rmse, r.n_pairs))
}

/// Writes a synthetic face grid dataset and returns its manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, subjects=8, poses=5, exprs=7, size=32, seed=0))]
fn synth_generate(out_dir: PathBuf, subjects: usize, poses: usize, exprs: usize, size: usize, seed: u64) -> PyResult<PathBuf> {
    let spec = SynthSpec { n_subjects: subjects, k_pose: poses, k_expr: exprs, image_size: size, seed };
    synth(&spec, &out_dir).map_err(to_py)
}

fn run_config(config: Option<&str>) -> PyResult<RunConfig> {
    match config {
        Some(text) => RunConfig::from_toml_str(text, std::path::Path::new("<python>")).map_err(to_py),
        None => Ok(RunConfig::default()),
    }
}

/// Trains one stage into `out_dir` and returns the per-step loss log as dicts.
#[pyfunction]
#[pyo3(signature = (stage, data_dir, out_dir, config=None, max_steps=None))]
fn train_stage<'py>(
    py: Python<'py>,
    stage: &str,
    data_dir: PathBuf,
    out_dir: PathBuf,
    config: Option<&str>,
    max_steps: Option<u64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let kind = StageKind::parse(stage).map_err(to_py)?;
    let mut cfg = run_config(config)?;
    cfg.data.dir = Some(data_dir);
    if let Some(n) = max_steps {
        cfg.train.max_steps = n;
    }
    let outcome = py.detach(|| run_stage(&cfg, kind, &out_dir)).map_err(to_py)?;
    outcome
        .log
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("step", r.step)?;
            d.set_item("loss_adv_d", r.loss_adv_d)?;
            d.set_item("loss_adv_g", r.loss_adv_g)?;
            d.set_item("loss_pc", r.loss_pc)?;
            d.set_item("loss_cascade", r.loss_cascade)?;
            d.set_item("loss_gp", r.loss_gp)?;
            d.set_item("loss_l1", r.loss_l1)?;
            d.set_item("total", r.total)?;
            Ok(d)
        })
        .collect()
}

/// Two trained stages chained in PE or EP order.
#[pyclass(name = "Pipeline", module = "pipgan_py")]
struct PyPipeline {
    inner: pipgan::PipelineModel,
    pose_categories: Vec<String>,
    expression_categories: Vec<String>,
}

#[pymethods]
impl PyPipeline {
    #[new]
    #[pyo3(signature = (pose_checkpoint, expression_checkpoint, order="PE", neutral_passthrough=true))]
    fn new(pose_checkpoint: PathBuf, expression_checkpoint: PathBuf, order: &str, neutral_passthrough: bool) -> PyResult<Self> {
        let order = PipelineOrder::parse(order).map_err(to_py)?;
        let (pose, _) = load_model_expecting(&pose_checkpoint, StageKind::Pose, None).map_err(to_py)?;
        let (expr, _) = load_model_expecting(&expression_checkpoint, StageKind::Expression, None).map_err(to_py)?;
        let pose_categories = pose.spec.schema.categories.clone();
        let expression_categories = expr.spec.schema.categories.clone();
        let inner = pipgan::compose(order, pose, expr, neutral_passthrough).map_err(to_py)?;
        Ok(Self { inner, pose_categories, expression_categories })
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.inner.image_size()
    }

    #[getter]
    fn order(&self) -> &'static str {
        self.inner.order_name()
    }

    #[getter]
    fn pose_categories(&self) -> Vec<String> {
        self.pose_categories.clone()
    }

    #[getter]
    fn expression_categories(&self) -> Vec<String> {
        self.expression_categories.clone()
    }

    /// Renders `image` at every (pose, expression) pair of the given class
    /// indices; returns `(pose, expression, Image)` tuples in row-major order.
    #[pyo3(signature = (image, poses, expressions, seed=0))]
    fn expand(&self, py: Python<'_>, image: &PyImage, poses: Vec<usize>, expressions: Vec<usize>, seed: u64) -> PyResult<Vec<(usize, usize, PyImage)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = image.inner.clone();
        let exp = py.detach(|| self.inner.expand(&input, &poses, &expressions, &mut rng)).map_err(to_py)?;
        Ok(exp.outputs.into_iter().map(|c| (c.pose, c.expression, PyImage { inner: c.image })).collect())
    }
}

/// Discriminator loss for real and fake logits.
#[pyfunction]
fn discriminator_loss(real_logits: Vec<f64>, fake_logits: Vec<f64>) -> PyResult<f64> {
    if real_logits.len() != fake_logits.len() || real_logits.is_empty() {
        return Err(PyValueError::new_err("logit lists must be non-empty and of equal length"));
    }
    let n = real_logits.len();
    Ok(adversarial_d_loss(&Tensor::from_vec(real_logits, &[n]), &Tensor::from_vec(fake_logits, &[n])).item())
}

/// Mean softmax cross-entropy of `logits` (one row per sample) against `labels`.
#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    let k = logits.first().map_or(0, Vec::len);
    if k == 0 || logits.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("logits must be a non-empty rectangular list"));
    }
    let n = logits.len();
    let t = Tensor::from_vec(logits.into_iter().flatten().collect(), &[n, k]);
    Ok(classification_loss(&t, &labels).map_err(to_py)?.item())
}

/// Builds the method table from run directories; returns its CSV text.
#[pyfunction]
fn ablation_table(runs: Vec<PathBuf>) -> PyResult<String> {
    Ok(table_from_runs(&runs).map_err(to_py)?.to_csv())
}

#[pymodule]
fn pipgan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(image_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_dirs, m)?)?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(train_stage, m)?)?;
    m.add_function(wrap_pyfunction!(discriminator_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(ablation_table, m)?)?;
    Ok(())
}
