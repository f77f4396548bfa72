//! Python bindings: datasets, models, training, the privacy accountant and the threshold
//! attack, plus a one-call experiment runner.

use std::path::PathBuf;

use miaeval::attacks::{evaluate_attack, fit_threshold, ThresholdMode, ThresholdModel};
use miaeval::cli::{run_experiment_config, CliError};
use miaeval::data::{
    gen_gaussian_mixture_with, load_csv, stratified_four_way, write_csv, SyntheticSpec,
};
use miaeval::nn::{init_model, test_accuracy};
use miaeval::optim::{read_model, train, LrSchedule, NoisePlacement, SamMode};
use miaeval::privacy::{epsilon_from_rdp, error_bound as bound, AccountantConfig};
use miaeval::{Error, MlpModel, Optimizer, TrainConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Labelled feature rows.
#[pyclass(name = "Dataset", module = "pymiaeval", frozen)]
struct PyDataset {
    inner: miaeval::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> PyResult<Self> {
        let inner = miaeval::Dataset::from_rows(rows, labels, num_classes).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Isotropic Gaussian mixture with `per_class` samples of each class. `seed` fixes the
    /// class means; `draw_seed` (default `seed`) the samples, so train and test sets from
    /// one mixture share `seed` and differ in `draw_seed`.
    #[staticmethod]
    #[pyo3(signature = (classes, dim, per_class, separation=1.0, noise_std=1.0, seed=0, draw_seed=None))]
    fn synthetic(
        classes: usize,
        dim: usize,
        per_class: usize,
        separation: f64,
        noise_std: f64,
        seed: u64,
        draw_seed: Option<u64>,
    ) -> PyResult<Self> {
        let spec = SyntheticSpec {
            num_classes: classes,
            dim,
            per_class,
            separation,
            noise_std,
            seed,
        };
        Ok(Self {
            inner: gen_gaussian_mixture_with(&spec, draw_seed.unwrap_or(seed)).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_csv(&path).map_err(to_py)?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        write_csv(&self.inner, &path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.iter().map(|s| s.features.clone()).collect()
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.iter().map(|s| s.label).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(len={}, dim={}, num_classes={})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.num_classes()
        )
    }
}

/// Dense ReLU classifier.
#[pyclass(name = "Mlp", module = "pymiaeval", frozen)]
struct PyMlp {
    inner: MlpModel,
}

#[pymethods]
impl PyMlp {
    /// He-initialised model with layer widths `dims` (input, hidden..., classes).
    #[new]
    #[pyo3(signature = (dims, seed=0, dropout=0.0))]
    fn new(dims: Vec<usize>, seed: u64, dropout: f64) -> PyResult<Self> {
        Ok(Self {
            inner: init_model(&dims, dropout, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (dims, params, dropout=0.0))]
    fn from_params(dims: Vec<usize>, params: Vec<f64>, dropout: f64) -> PyResult<Self> {
        Ok(Self {
            inner: MlpModel::from_params(dims, params, dropout).map_err(to_py)?,
        })
    }

    /// Reads a checkpoint written by `save` or by the `experiment` command.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_model(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        miaeval::Checkpoint {
            epoch: 0,
            model: self.inner.clone(),
        }
        .write_to(&path)
        .map_err(to_py)
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    /// Softmax confidences for one feature row.
    fn predict(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predict(&x).map_err(to_py)
    }

    fn predict_label(&self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.predict_label(&x).map_err(to_py)
    }

    fn loss(&self, x: Vec<f64>, label: usize) -> PyResult<f64> {
        self.inner
            .loss(&miaeval::Sample::new(0, x, label))
            .map_err(to_py)
    }

    fn accuracy(&self, dataset: &PyDataset) -> PyResult<f64> {
        test_accuracy(&self.inner, &dataset.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Mlp(dims={:?})", self.inner.dims())
    }
}

/// Optimizer and hyperparameters for `train`.
#[pyclass(name = "TrainConfig", module = "pymiaeval", frozen)]
struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (
        optimizer="sgd", learning_rate=0.05, schedule="step-decay", epochs=15, batch_size=32,
        clip=None, sigma=0.0, rho=None, sam_mode="shared", noise_placement="after-average",
        l2=0.0, dropout=0.0, seed=0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        optimizer: &str,
        learning_rate: f64,
        schedule: &str,
        epochs: usize,
        batch_size: usize,
        clip: Option<f64>,
        sigma: f64,
        rho: Option<f64>,
        sam_mode: &str,
        noise_placement: &str,
        l2: f64,
        dropout: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let optimizer: Optimizer = optimizer.parse().map_err(to_py)?;
        let schedule = match schedule {
            "step-decay" => LrSchedule::step_decay(learning_rate),
            "constant" => LrSchedule::constant(learning_rate, epochs),
            other => return Err(PyValueError::new_err(format!("unknown schedule '{other}'"))),
        }
        .map_err(to_py)?;
        let mut inner = TrainConfig::sgd(schedule, batch_size, seed);
        inner.optimizer = optimizer;
        inner.clip_threshold = clip;
        inner.noise_multiplier = sigma;
        inner.sam_radius = rho;
        inner.sam_mode = match sam_mode {
            "shared" => SamMode::Shared,
            "per-sample" => SamMode::PerSample,
            other => return Err(PyValueError::new_err(format!("unknown sam_mode '{other}'"))),
        };
        inner.noise_placement = match noise_placement {
            "after-average" => NoisePlacement::AfterAverage,
            "inside-average" => NoisePlacement::InsideAverage,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown noise_placement '{other}'"
                )))
            }
        };
        inner.l2_coeff = l2;
        inner.dropout_rate = dropout;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    /// Accounted epsilon after the last epoch for a training set of `n` samples.
    #[pyo3(signature = (n, delta=1e-5))]
    fn epsilon(&self, n: usize, delta: f64) -> PyResult<f64> {
        let c = &self.inner;
        if !c.optimizer.is_private() {
            return Ok(f64::INFINITY);
        }
        let cfg =
            AccountantConfig::for_training(n, c.batch_size, c.epochs, c.noise_multiplier, delta);
        epsilon_from_rdp(&cfg).map_err(to_py)
    }
}

/// Trains a fresh model with layer widths `dims`; returns one model per epoch.
#[pyfunction]
#[pyo3(name = "train")]
fn train_py(
    py: Python<'_>,
    dataset: &PyDataset,
    dims: Vec<usize>,
    config: &PyTrainConfig,
) -> PyResult<Vec<PyMlp>> {
    let ckpts = py
        .detach(|| train(&dataset.inner, &dims, &config.inner))
        .map_err(to_py)?;
    Ok(ckpts
        .into_iter()
        .map(|c| PyMlp { inner: c.model })
        .collect())
}

/// Epsilon of `epochs` passes of DP-SGD over `n` samples with batch size `batch`.
#[pyfunction]
#[pyo3(signature = (sigma, epochs, n, batch, delta=1e-5))]
fn epsilon(sigma: f64, epochs: usize, n: usize, batch: usize, delta: f64) -> PyResult<f64> {
    epsilon_from_rdp(&AccountantConfig::for_training(
        n, batch, epochs, sigma, delta,
    ))
    .map_err(to_py)
}

/// Lowest attainable attack error `(FPR + FNR) / 2` against an (epsilon, delta)-DP model.
#[pyfunction]
#[pyo3(signature = (epsilon, delta=0.0))]
fn error_bound(epsilon: f64, delta: f64) -> f64 {
    bound(epsilon, delta)
}

/// Outcome of one attack against one model.
#[pyclass(name = "AttackResult", module = "pymiaeval", frozen, get_all)]
struct PyAttackResult {
    fpr: f64,
    fnr: f64,
    p_err: f64,
    member_decisions: Vec<bool>,
    nonmember_decisions: Vec<bool>,
}

#[pymethods]
impl PyAttackResult {
    fn __repr__(&self) -> String {
        format!(
            "AttackResult(fpr={}, fnr={}, p_err={})",
            self.fpr, self.fnr, self.p_err
        )
    }
}

/// Loss-threshold attack: a sample is a member when its loss is below the mean loss on
/// `fit_on` (overall, or of its class when `per_class`).
#[pyfunction]
#[pyo3(signature = (model, members, nonmembers, fit_on=None, per_class=false))]
fn threshold_attack(
    model: &PyMlp,
    members: &PyDataset,
    nonmembers: &PyDataset,
    fit_on: Option<&PyDataset>,
    per_class: bool,
) -> PyResult<PyAttackResult> {
    let mode = if per_class {
        ThresholdMode::PerClass
    } else {
        ThresholdMode::Global
    };
    let fit_on = fit_on.unwrap_or(members);
    let tm: ThresholdModel = fit_threshold(&model.inner, &fit_on.inner, mode).map_err(to_py)?;
    let ev = evaluate_attack(
        |s| tm.decide(&model.inner, s),
        &members.inner,
        &nonmembers.inner,
    )
    .map_err(to_py)?;
    Ok(PyAttackResult {
        fpr: ev.fpr,
        fnr: ev.fnr,
        p_err: ev.p_err,
        member_decisions: ev.member_decisions,
        nonmember_decisions: ev.nonmember_decisions,
    })
}

/// Stratified split into `(target_train, target_test, shadow_train, shadow_test)`.
#[pyfunction]
#[pyo3(signature = (train, test, seed=0))]
fn four_way_split(
    train: &PyDataset,
    test: &PyDataset,
    seed: u64,
) -> PyResult<(PyDataset, PyDataset, PyDataset, PyDataset)> {
    let s = stratified_four_way(&train.inner, &test.inner, seed).map_err(to_py)?;
    let wrap = |inner| PyDataset { inner };
    Ok((
        wrap(s.target_train),
        wrap(s.target_test),
        wrap(s.shadow_train),
        wrap(s.shadow_test),
    ))
}

/// Runs an experiment config file and returns the output directory.
#[pyfunction]
#[pyo3(signature = (config, out=None))]
fn run_experiment(py: Python<'_>, config: PathBuf, out: Option<PathBuf>) -> PyResult<PathBuf> {
    let outputs = py
        .detach(|| run_experiment_config(&config, out.as_deref()))
        .map_err(|e| match e {
            CliError::Usage(_) => PyValueError::new_err(e.message().to_string()),
            CliError::Runtime(_) => {
                pyo3::exceptions::PyRuntimeError::new_err(e.message().to_string())
            }
        })?;
    Ok(outputs.dir)
}

#[pymodule]
fn pymiaeval(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyMlp>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyAttackResult>()?;
    m.add_function(wrap_pyfunction!(train_py, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(error_bound, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_attack, m)?)?;
    m.add_function(wrap_pyfunction!(four_way_split, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
