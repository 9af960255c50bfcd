//! Python bindings: datasets, training configs, training, checkpoints,
//! generators, metrics and the self-check.
//!
//! Images cross the boundary as flat row-major `float` lists in `[-1, 1]`
//! with an explicit `(n, c, h, w)` shape.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use one2one::datasets::{generate_synthetic, load_paired_dataset, write_paired_dataset, PairedDataset, Split, SyntheticTaskSpec};
use one2one::metrics::{self, evaluate, self_inverse_score, ReportMetadata, SsimParams};
use one2one::models::{load_checkpoint, parameter_count, save_checkpoint, Checkpoint, Direction, Generator, TrainMode};
use one2one::selfcheck::{run_selfcheck, SelfcheckOptions};
use one2one::training::{generator_from_checkpoint, train, TrainConfig};
use one2one::{Error, ImageTensor, Tensor};

type Shape = (usize, usize, usize, usize);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Image { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFinite { .. } | Error::CheckpointCorrupt(_) | Error::CheckpointVersion { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn tensor<T: one2one::Scalar>(data: Vec<T>, shape: Shape) -> PyResult<Tensor<T>> {
    Tensor::from_vec([shape.0, shape.1, shape.2, shape.3], data).map_err(py_err)
}

fn shape_of<T: one2one::Scalar>(t: &Tensor<T>) -> Shape {
    let [n, c, h, w] = t.shape();
    (n, c, h, w)
}

/// Paired images `(x, y)` with string ids.
#[pyclass(name = "Dataset", module = "one2one_py")]
pub struct PyDataset {
    inner: PairedDataset,
}

#[pymethods]
impl PyDataset {
    /// Generate a synthetic involution dataset (`biased_negation` or `gamma_swap`).
    #[staticmethod]
    #[pyo3(signature = (task, size, n, seed=0, split="train", texture="smoothed_noise", depth=6))]
    fn synthetic(task: &str, size: usize, n: usize, seed: u64, split: &str, texture: &str, depth: usize) -> PyResult<Self> {
        let spec = SyntheticTaskSpec {
            task: parse(task)?,
            image_size: size,
            n_samples: n,
            seed,
            texture: parse(texture)?,
            generator_depth: depth,
            split: parse(split)?,
        };
        Ok(PyDataset {
            inner: generate_synthetic(&spec).map_err(py_err)?,
        })
    }

    /// Load `<root>/<split>A` and `<root>/<split>B`.
    #[staticmethod]
    #[pyo3(signature = (root, split="train", channels=1))]
    fn load(root: PathBuf, split: &str, channels: usize) -> PyResult<Self> {
        Ok(PyDataset {
            inner: load_paired_dataset(&root, parse::<Split>(split)?, channels).map_err(py_err)?,
        })
    }

    fn save(&self, root: PathBuf) -> PyResult<usize> {
        Ok(write_paired_dataset(&root, &self.inner).map_err(py_err)?.len())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids().into_iter().map(String::from).collect()
    }

    fn domain_names(&self) -> (String, String) {
        self.inner.domain_names.clone()
    }

    /// `(x, y, shape)` of sample `i`.
    fn pair(&self, i: usize) -> PyResult<(Vec<f32>, Vec<f32>, Shape)> {
        let s = self
            .inner
            .samples
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("index {i} out of range for {} samples", self.inner.len())))?;
        Ok((s.x.data().to_vec(), s.y.data().to_vec(), shape_of(&s.x)))
    }

    /// The same pairs with the domains exchanged.
    fn swapped(&self) -> Self {
        PyDataset {
            inner: self.inner.swapped(),
        }
    }
}

/// Training configuration, round-tripped through its JSON form.
#[pyclass(name = "TrainConfig", module = "one2one_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    /// Desk-scale defaults for `mode` (`one2one`, `pix2pixA`, `pix2pixB`).
    #[new]
    #[pyo3(signature = (mode="one2one", channels=1))]
    fn new(mode: &str, channels: usize) -> PyResult<Self> {
        Ok(PyTrainConfig {
            inner: TrainConfig::desk(parse::<TrainMode>(mode)?, channels),
        })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        let inner: TrainConfig = serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(PyTrainConfig { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("config serializes")
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.as_str()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }
    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.epochs = v;
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }
    #[setter]
    fn set_batch_size(&mut self, v: usize) {
        self.inner.batch_size = v;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn lambda_l1(&self) -> f64 {
        self.inner.loss.lambda_l1
    }
    #[setter]
    fn set_lambda_l1(&mut self, v: f64) {
        self.inner.loss.lambda_l1 = v;
    }

    /// Steps in one epoch over `n` pairs.
    fn steps_per_epoch(&self, n: usize) -> u64 {
        self.inner.steps_per_epoch(n)
    }
}

/// A saved training state.
#[pyclass(name = "Checkpoint", module = "one2one_py")]
pub struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCheckpoint {
            inner: load_checkpoint(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.as_str()
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step
    }

    fn generator(&self) -> PyResult<PyGenerator> {
        Ok(PyGenerator {
            inner: generator_from_checkpoint(&self.inner).map_err(py_err)?,
        })
    }
}

/// Inference-only U-Net generator.
#[pyclass(name = "Generator", module = "one2one_py")]
pub struct PyGenerator {
    inner: Generator<f32>,
}

#[pymethods]
impl PyGenerator {
    /// Translate a batch; returns the flat output with its shape.
    fn translate(&self, data: Vec<f32>, shape: Shape) -> PyResult<(Vec<f32>, Shape)> {
        let out = self.inner.infer(&tensor(data, shape)?).map_err(py_err)?;
        Ok((out.data().to_vec(), shape_of(&out)))
    }

    fn parameter_count(&self) -> usize {
        parameter_count(&self.inner)
    }

    fn spec_json(&self) -> String {
        serde_json::to_string(self.inner.spec()).expect("spec serializes")
    }
}

/// Train `config` on `dataset`, optionally writing the run to `out`.
#[pyfunction]
#[pyo3(signature = (config, dataset, out=None))]
fn train_model(py: Python<'_>, config: &PyTrainConfig, dataset: &PyDataset, out: Option<PathBuf>) -> PyResult<PyCheckpoint> {
    let cfg = config.inner.clone();
    let inner = py.detach(|| train(&cfg, &dataset.inner, out.as_deref())).map_err(py_err)?;
    Ok(PyCheckpoint { inner })
}

/// Mean and std of L1, PSNR and SSIM over `dataset` in `direction` (`A2B` or `B2A`).
#[pyfunction]
fn evaluate_generator<'py>(
    py: Python<'py>,
    generator: &PyGenerator,
    dataset: &PyDataset,
    direction: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let dir: Direction = parse(direction)?;
    let r = evaluate(&generator.inner, &dataset.inner, dir, ReportMetadata::default()).map_err(py_err)?;
    let d = PyDict::new(py);
    let a = &r.aggregates;
    for (name, agg) in [("l1", &a.l1), ("psnr", &a.psnr), ("ssim", &a.ssim)] {
        d.set_item(format!("{name}_mean"), agg.mean)?;
        d.set_item(format!("{name}_std"), agg.std)?;
    }
    d.set_item("n", r.per_sample.len())?;
    Ok(d)
}

/// Mean L1 of `g(g(v))` to `v` over both domains, in `[0, 1]` space.
#[pyfunction]
fn self_inverse(generator: &PyGenerator, dataset: &PyDataset) -> PyResult<f64> {
    self_inverse_score(&generator.inner, &dataset.inner).map_err(py_err)
}

fn unit_pair(a: Vec<f64>, b: Vec<f64>, shape: Shape) -> PyResult<(Tensor<f64>, Tensor<f64>)> {
    Ok((tensor(a, shape)?, tensor(b, shape)?))
}

/// Mean absolute difference.
#[pyfunction]
fn l1(a: Vec<f64>, b: Vec<f64>, shape: Shape) -> PyResult<f64> {
    let (a, b) = unit_pair(a, b, shape)?;
    metrics::l1(&a, &b).map_err(py_err)
}

/// PSNR in dB, capped for identical inputs.
#[pyfunction]
#[pyo3(signature = (a, b, shape, data_range=1.0))]
fn psnr(a: Vec<f64>, b: Vec<f64>, shape: Shape, data_range: f64) -> PyResult<f64> {
    let (a, b) = unit_pair(a, b, shape)?;
    metrics::psnr(&a, &b, data_range).map_err(py_err)
}

/// Gaussian-window SSIM (11x11, sigma 1.5), channel and sample mean.
#[pyfunction]
#[pyo3(signature = (a, b, shape, data_range=1.0))]
fn ssim(a: Vec<f64>, b: Vec<f64>, shape: Shape, data_range: f64) -> PyResult<f64> {
    let (a, b) = unit_pair(a, b, shape)?;
    let p = SsimParams {
        data_range,
        ..SsimParams::default()
    };
    metrics::ssim(&a, &b, &p).map_err(py_err)
}

/// `(passed, [(name, passed, detail), ...])`.
#[pyfunction]
fn selfcheck(py: Python<'_>) -> (bool, Vec<(String, bool, String)>) {
    let r = py.detach(|| run_selfcheck(&SelfcheckOptions::default()));
    let checks = r.checks.iter().map(|c| (c.name.clone(), c.passed, c.detail.clone())).collect();
    (r.passed(), checks)
}

/// Map `[-1, 1]` images to `[0, 1]`, the space metrics are computed in.
#[pyfunction]
fn to_unit(data: Vec<f32>, shape: Shape) -> PyResult<Vec<f64>> {
    let t: ImageTensor = tensor(data, shape)?;
    Ok(metrics::to_unit(&t).into_vec())
}

#[pymodule]
fn one2one_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyGenerator>()?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_generator, m)?)?;
    m.add_function(wrap_pyfunction!(self_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(l1, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(selfcheck, m)?)?;
    m.add_function(wrap_pyfunction!(to_unit, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
