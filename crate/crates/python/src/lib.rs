//! Python bindings: datasets, models, training, evaluation and the
//! interpretation grids, with structured results returned as plain
//! dicts and lists.

use std::sync::Arc;

use eegbench::dataio::{
    generate_synthetic, load_dataset, save_dataset, split_scheme, validate_dataset_dir, Dataset, Montage, Scheme,
    SyntheticSpec, TrialView,
};
use eegbench::interpret::{spatial_topomap, temporal_spectra, DEFAULT_RESOLUTION};
use eegbench::models::{build_model, load_checkpoint, save_checkpoint, ModelConfig, ModelInstance, ModelName};
use eegbench::trainer::{cohen_kappa as kappa, evaluate, predict_proba, train as train_model, TrainConfig, TrainControl};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(eegbench_py, EegbenchError, PyException);

fn err(e: eegbench::Error) -> PyErr {
    match e {
        eegbench::Error::Parameter(_) | eegbench::Error::UnsupportedModel(_) | eegbench::Error::Lookup(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => EegbenchError::new_err(other.to_string()),
    }
}

/// Serializes through JSON and hands the result to Python's `json.loads`.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| EegbenchError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Builds a serde-defaulted struct from keyword arguments.
fn from_kwargs<T: DeserializeOwned>(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let text: String = match kwargs {
        Some(k) => py.import("json")?.call_method1("dumps", (k,))?.extract()?,
        None => "{}".into(),
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse<T: std::str::FromStr<Err = eegbench::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// A loaded or generated collection of epoch sets.
#[pyclass(name = "Dataset", module = "eegbench_py", frozen)]
pub struct PyDataset {
    inner: Arc<Dataset>,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(load_dataset(path).map_err(err)?) })
    }

    /// Synthetic motor-imagery data; keyword arguments override the
    /// default generator settings (subjects, channels, snr, ...).
    #[staticmethod]
    #[pyo3(signature = (name, seed = 7, **spec))]
    fn synthetic(py: Python<'_>, name: String, seed: u64, spec: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let spec: SyntheticSpec = from_kwargs(py, spec)?;
        let sets = py.detach(|| generate_synthetic(&spec, seed)).map_err(err)?;
        Ok(Self { inner: Arc::new(Dataset { name, sets }) })
    }

    fn save(&self, path: &str) -> PyResult<String> {
        Ok(save_dataset(&self.inner, path).map_err(err)?.display().to_string())
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.summary())
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn subjects(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.sets.iter().map(|s| s.subject_id.clone()).collect();
        ids.dedup();
        ids
    }

    /// Trial counts of a scheme split: train, val, test and fine_tune.
    #[pyo3(signature = (scheme, subject, val_fraction = 0.125, seed = 0))]
    fn split_sizes<'py>(
        &self,
        py: Python<'py>,
        scheme: &str,
        subject: &str,
        val_fraction: f64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let split = split_scheme(&self.inner.sets, parse(scheme)?, subject, val_fraction, seed).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("train", split.train.len())?;
        d.set_item("val", split.val.len())?;
        d.set_item("test", split.test.len())?;
        d.set_item("fine_tune", split.fine_tune.map(|f| f.len()))?;
        Ok(d)
    }

    fn __len__(&self) -> usize {
        self.inner.sets.iter().map(|s| s.trials()).sum()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(name={:?}, sets={})", self.inner.name, self.inner.sets.len())
    }
}

/// One of the three built-in networks with its weights.
#[pyclass(name = "Model", module = "eegbench_py")]
pub struct PyModel {
    inner: ModelInstance,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (name, channels = 22, timepoints = 562, classes = 4, fs = 128.0, seed = 0))]
    fn new(name: &str, channels: usize, timepoints: usize, classes: usize, fs: f64, seed: u64) -> PyResult<Self> {
        let config = ModelConfig::new(parse(name)?, channels, timepoints, classes, fs);
        Ok(Self { inner: build_model(&config, seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_checkpoint(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.inner, path).map(|_| ()).map_err(err)
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name().as_str()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Class probabilities for every trial of one subject's session.
    #[pyo3(signature = (dataset, subject, session = "2", batch_size = 128))]
    fn predict_proba(
        &mut self,
        py: Python<'_>,
        dataset: &PyDataset,
        subject: &str,
        session: &str,
        batch_size: usize,
    ) -> PyResult<Vec<Vec<f64>>> {
        let set = find_set(&dataset.inner, subject, session)?;
        let classes = set.class_names.len();
        let model = &mut self.inner;
        let probs = py.detach(|| predict_proba(model, &TrialView::of_set(set), classes, batch_size)).map_err(err)?;
        Ok(probs.values().chunks(classes).map(<[f64]>::to_vec).collect())
    }

    /// Accuracy, kappa, loss and confusion matrix on one session.
    #[pyo3(signature = (dataset, subject, session = "2", batch_size = 128))]
    fn evaluate<'py>(
        &mut self,
        py: Python<'py>,
        dataset: &PyDataset,
        subject: &str,
        session: &str,
        batch_size: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let set = find_set(&dataset.inner, subject, session)?;
        let classes = set.class_names.len();
        let model = &mut self.inner;
        let eval = py.detach(|| evaluate(model, &TrialView::of_set(set), classes, batch_size)).map_err(err)?;
        to_py(py, &eval)
    }

    /// Interpolated scalp map of one spatial kernel (SCCNet only); cells
    /// outside the head are `None`.
    #[pyo3(signature = (kernel, resolution = DEFAULT_RESOLUTION))]
    fn topomap(&self, kernel: usize, resolution: usize) -> PyResult<Vec<Vec<Option<f64>>>> {
        let montage = Montage::default_for(self.inner.config.channels);
        Ok(spatial_topomap(&self.inner, kernel, &montage, resolution).map_err(err)?.values)
    }

    /// Magnitude spectra of the temporal kernels, sorted by peak frequency.
    #[pyo3(signature = (per_component = false))]
    fn temporal_spectra<'py>(&self, py: Python<'py>, per_component: bool) -> PyResult<Bound<'py, PyAny>> {
        let image = temporal_spectra(&self.inner, self.inner.config.fs, per_component).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("frequencies", image.frequencies)?;
        d.set_item("rows", image.rows)?;
        d.set_item("row_labels", image.row_labels)?;
        d.set_item("peaks", image.sort_keys)?;
        Ok(d.into_any())
    }

    fn __repr__(&self) -> String {
        format!("Model(name={:?}, params={})", self.name(), self.param_count())
    }
}

fn find_set<'a>(dataset: &'a Dataset, subject: &str, session: &str) -> PyResult<&'a eegbench::dataio::EpochSet> {
    dataset
        .sets
        .iter()
        .find(|s| s.subject_id == subject && s.session_id == session)
        .ok_or_else(|| PyValueError::new_err(format!("no session {session} for subject {subject}")))
}

/// Trains a model under a scheme and returns `(model, metrics)`.
/// Keyword arguments set training options (epochs, batch_size, lr, seed,
/// val_fraction, fine_tune_epochs, checkpoint_path).
#[pyfunction]
#[pyo3(signature = (dataset, model, scheme, subject, **options))]
fn train<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    model: &str,
    scheme: &str,
    subject: &str,
    options: Option<&Bound<'py, PyDict>>,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let config: TrainConfig = from_kwargs(py, options)?;
    let name: ModelName = parse(model)?;
    let scheme: Scheme = parse(scheme)?;
    let data = dataset.inner.clone();
    let first = data.sets.first().ok_or_else(|| PyValueError::new_err("dataset is empty"))?;
    let model_config = ModelConfig::new(name, first.channels(), first.timepoints(), first.class_names.len(), first.fs);
    let (instance, record) = py
        .detach(|| {
            let split = split_scheme(&data.sets, scheme, subject, config.val_fraction, config.seed)?;
            train_model(&data.sets, &split, &model_config, &config, &TrainControl::default())
        })
        .map_err(err)?;
    Ok((PyModel { inner: instance }, to_py(py, &record)?))
}

/// Validates a dataset directory or a single epoch directory.
#[pyfunction]
fn validate<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &validate_dataset_dir(path).map_err(err)?)
}

#[pyfunction]
fn cohen_kappa(matrix: Vec<Vec<i64>>) -> PyResult<f64> {
    kappa(&matrix).map_err(err)
}

/// Parameter counts of the built-in models at the given input size.
#[pyfunction]
#[pyo3(signature = (channels = 22, timepoints = 562, classes = 4, fs = 128.0))]
fn param_counts(channels: usize, timepoints: usize, classes: usize, fs: f64) -> Vec<(String, Option<usize>)> {
    ModelName::ALL
        .into_iter()
        .map(|name| {
            let config = ModelConfig::new(name, channels, timepoints, classes, fs);
            (name.as_str().to_string(), build_model(&config, 0).ok().map(|m| m.param_count()))
        })
        .collect()
}

#[pymodule]
pub fn eegbench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EegbenchError", m.py().get_type::<EegbenchError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(param_counts, m)?)?;
    Ok(())
}
