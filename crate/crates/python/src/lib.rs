//! Python bindings: corpus generation, training, prediction, evaluation
//! and the schedule and metric utilities.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use semunit::cli::MANIFEST_FILE;
use semunit::config::RunConfig;
use semunit::corpus::{GenConfig, Record, DEFAULT_MAX_LEN};
use semunit::mdc;
use semunit::metrics::{self, BinaryLabelMatrix, EvalReport};
use semunit::model::{load_model, save_model, Model, ModelMeta};
use semunit::pipeline::{generate_corpus as gen_corpus, train_run, write_json, write_run, Dataset, Splits};
use semunit::tensor::Precision;
use semunit::trainer::evaluate;
use semunit::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Schedule(_) | Error::Corpus(_) | Error::Metrics(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Layers keyword overrides over a serializable base value.
fn with_overrides<T: Serialize + serde::de::DeserializeOwned>(
    py: Python<'_>,
    base: &T,
    overrides: Option<&Bound<'_, PyDict>>,
) -> PyResult<T> {
    let mut value = serde_json::to_value(base).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    if let Some(kw) = overrides {
        let extra: serde_json::Map<String, serde_json::Value> = from_py(py, kw.as_any())?;
        value
            .as_object_mut()
            .expect("struct serializes to an object")
            .extend(extra);
    }
    serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn matrix(rows: Vec<Vec<bool>>) -> PyResult<BinaryLabelMatrix> {
    let cols = rows.first().map_or(0, Vec::len);
    BinaryLabelMatrix::from_rows(rows, cols).map_err(py_err)
}

/// Validates a dilation schedule and returns its M-sequence.
#[pyfunction]
fn validate_schedule(kernel: usize, rates: Vec<usize>) -> PyResult<Vec<i64>> {
    mdc::validate_schedule(kernel, &rates)
        .map(|s| s.m().to_vec())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn receptive_span(kernel: usize, rates: Vec<usize>) -> usize {
    mdc::receptive_span(kernel, &rates)
}

#[pyfunction]
fn hamming_loss(pred: Vec<Vec<bool>>, gold: Vec<Vec<bool>>) -> PyResult<f64> {
    metrics::hamming_loss(&matrix(pred)?, &matrix(gold)?).map_err(py_err)
}

/// Micro precision, recall and F1.
#[pyfunction]
fn micro_prf(pred: Vec<Vec<bool>>, gold: Vec<Vec<bool>>) -> PyResult<(f64, f64, f64)> {
    let m = metrics::micro_prf(&matrix(pred)?, &matrix(gold)?).map_err(py_err)?;
    Ok((m.p, m.r, m.f1))
}

/// Micro-F1 over label columns `k..`, columns ordered by descending frequency.
#[pyfunction]
fn band_micro_f1(pred: Vec<Vec<bool>>, gold: Vec<Vec<bool>>, k: usize) -> PyResult<f64> {
    metrics::band_micro_f1(&matrix(pred)?, &matrix(gold)?, k).map_err(py_err)
}

/// Writes a synthetic planted-phrase corpus to `out` and returns its
/// manifest. Keyword arguments override generator settings.
#[pyfunction]
#[pyo3(signature = (out, seed = 1, **overrides))]
fn generate_corpus<'py>(
    py: Python<'py>,
    out: PathBuf,
    seed: u64,
    overrides: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let gen: GenConfig = with_overrides(py, &GenConfig::default(), overrides)?;
    let manifest = py
        .detach(|| -> semunit::Result<_> {
            let (splits, manifest) = gen_corpus(&gen, seed)?;
            splits.write_dir(&out)?;
            write_json(&out.join(MANIFEST_FILE), &manifest)?;
            Ok(manifest)
        })
        .map_err(py_err)?;
    to_py(py, &manifest)
}

/// Resolved run configuration for a preset with keyword overrides.
#[pyfunction]
#[pyo3(signature = (preset = "desk", **overrides))]
fn run_config<'py>(
    py: Python<'py>,
    preset: &str,
    overrides: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let base = RunConfig::preset(preset.parse().map_err(py_err)?);
    let cfg: RunConfig = with_overrides(py, &base, overrides)?;
    cfg.validate().map_err(py_err)?;
    to_py(py, &cfg)
}

enum Weights {
    F32(Model<f32>),
    F64(Model<f64>),
}

/// A trained classifier with its vocabularies.
#[pyclass(module = "semunit")]
struct Classifier {
    meta: ModelMeta,
    weights: Weights,
}

impl Classifier {
    fn predict_ids(&self, docs: &[Vec<u32>]) -> semunit::Result<Vec<Vec<u32>>> {
        let it = docs.iter().map(Vec::as_slice);
        match &self.weights {
            Weights::F32(m) => m.predict_sets(it),
            Weights::F64(m) => m.predict_sets(it),
        }
    }

    fn evaluate_records(&self, records: Vec<Record>, bands: &[usize]) -> semunit::Result<EvalReport> {
        let splits = Splits {
            test: records,
            ..Splits::default()
        };
        let data = Dataset::with_vocabularies(
            &splits,
            self.meta.vocab.clone(),
            self.meta.labels.clone(),
            DEFAULT_MAX_LEN,
        )?;
        if data.test.is_empty() {
            return Err(Error::Config("no usable documents".into()));
        }
        match &self.weights {
            Weights::F32(m) => evaluate(m, &data.test, bands),
            Weights::F64(m) => evaluate(m, &data.test, bands),
        }
    }
}

#[pymethods]
impl Classifier {
    /// Loads a checkpoint file or run directory.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (meta, model, precision) = load_model::<f64>(&path).map_err(py_err)?;
        let weights = match precision {
            Precision::F32 => Weights::F32(model.cast()),
            Precision::F64 => Weights::F64(model),
        };
        Ok(Self { meta, weights })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        match &self.weights {
            Weights::F32(m) => save_model(&dir, &self.meta, m),
            Weights::F64(m) => save_model(&dir, &self.meta, m),
        }
        .map_err(py_err)
    }

    /// Label names in model order (descending training frequency).
    #[getter]
    fn labels(&self) -> Vec<String> {
        self.meta.labels.labels().to_vec()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.meta.vocab.len()
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.meta.config)
    }

    /// Predicted label names for each text, in emission order.
    #[pyo3(signature = (texts, max_len = DEFAULT_MAX_LEN))]
    fn predict(&self, py: Python<'_>, texts: Vec<String>, max_len: usize) -> PyResult<Vec<Vec<String>>> {
        let docs: Vec<Vec<u32>> = texts
            .iter()
            .map(|t| {
                let mut ids = self.meta.vocab.encode(t);
                ids.truncate(max_len);
                ids
            })
            .collect();
        if let Some(i) = docs.iter().position(Vec::is_empty) {
            return Err(PyValueError::new_err(format!("text {i} has no tokens")));
        }
        let sets = py.detach(|| self.predict_ids(&docs)).map_err(py_err)?;
        Ok(sets
            .into_iter()
            .map(|s| {
                s.into_iter()
                    .map(|id| self.meta.labels.name(id).unwrap_or_default().to_string())
                    .collect()
            })
            .collect())
    }

    /// Hamming loss, micro P/R/F1 and band F1s on labelled texts.
    #[pyo3(signature = (texts, labels, bands = vec![]))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        texts: Vec<String>,
        labels: Vec<Vec<String>>,
        bands: Vec<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        if texts.len() != labels.len() {
            return Err(PyValueError::new_err("texts and labels differ in length"));
        }
        let records: Vec<Record> = texts
            .into_iter()
            .zip(labels)
            .map(|(text, labels)| Record { text, labels })
            .collect();
        let report = py.detach(|| self.evaluate_records(records, &bands)).map_err(py_err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!(
            "Classifier(variant={}, labels={}, vocab={})",
            self.meta.config.variant,
            self.meta.labels.len(),
            self.meta.vocab.len()
        )
    }
}

/// Trains on the corpus in `data_dir`. Keyword arguments override the
/// preset. Returns the classifier and a summary with the per-epoch
/// history and the test report; when `out` is given the run is also
/// written there.
#[pyfunction]
#[pyo3(signature = (data_dir, out = None, preset = "desk", **overrides))]
fn train<'py>(
    py: Python<'py>,
    data_dir: PathBuf,
    out: Option<PathBuf>,
    preset: &str,
    overrides: Option<&Bound<'py, PyDict>>,
) -> PyResult<(Classifier, Bound<'py, PyAny>)> {
    let mut cfg: RunConfig = with_overrides(py, &RunConfig::preset(preset.parse().map_err(py_err)?), overrides)?;
    cfg.data_dir = Some(data_dir);
    cfg.validate().map_err(py_err)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        history: &'a [semunit::trainer::EpochRecord],
        best_epoch: usize,
        best_dev_f1: f64,
        test: Option<&'a EvalReport>,
    }

    let (classifier, summary) = py
        .detach(|| -> semunit::Result<_> {
            let dir = cfg.data_dir.as_deref().expect("set above");
            let data = Dataset::build(&Splits::read_dir(dir)?, cfg.vocab_cap, cfg.max_len)?;
            macro_rules! run {
                ($f:ty, $wrap:path) => {{
                    let run = train_run::<$f>(&cfg, &data, |_| {})?;
                    if let Some(o) = &out {
                        write_run(o, &cfg, &run)?;
                    }
                    let summary = serde_json::to_value(Summary {
                        history: &run.outcome.history,
                        best_epoch: run.outcome.best_epoch,
                        best_dev_f1: run.outcome.best_dev_f1,
                        test: run.test.as_ref(),
                    })?;
                    (
                        Classifier {
                            meta: run.meta,
                            weights: $wrap(run.model),
                        },
                        summary,
                    )
                }};
            }
            Ok(match cfg.precision {
                Precision::F32 => run!(f32, Weights::F32),
                Precision::F64 => run!(f64, Weights::F64),
            })
        })
        .map_err(py_err)?;
    Ok((classifier, to_py(py, &summary)?))
}

#[pymodule]
#[pyo3(name = "semunit")]
fn semunit_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Classifier>()?;
    m.add_function(wrap_pyfunction!(validate_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(receptive_span, m)?)?;
    m.add_function(wrap_pyfunction!(hamming_loss, m)?)?;
    m.add_function(wrap_pyfunction!(micro_prf, m)?)?;
    m.add_function(wrap_pyfunction!(band_micro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
