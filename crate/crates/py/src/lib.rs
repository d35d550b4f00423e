//! Python bindings. Proposals and predictions cross the boundary as plain
//! tuples; reports come back as dicts.

use std::collections::BTreeSet;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tgloc_core::gradcheck::{run_gradcheck, GradcheckOptions};
use tgloc_core::guidance::{self, DEFAULT_LEXICON};
use tgloc_core::localizer::{self, Proposal};
use tgloc_core::metrics::{self, GroundTruth, Prediction};
use tgloc_core::results::predictions_from;
use tgloc_core::synth::{synth_bundle, SynthSpec};
use tgloc_core::{Error, RunConfig, Tensor, VideoBundle};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// (video_id, t_start, t_end, label, score)
type PredTuple = (String, f64, f64, String, f64);
/// (video_id, t_start, t_end, label)
type GtTuple = (String, f64, f64, String);

#[pyclass(name = "Bundle", module = "tgloc")]
struct PyBundle {
    inner: VideoBundle,
}

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: tgloc_core::load_bundle(path).map_err(py_err)?,
        })
    }

    /// Synthetic bundle with one or two annotated segments.
    #[staticmethod]
    #[pyo3(signature = (seed, n_frames = 200, n_classes = 4, noise = 0.1))]
    fn synth(seed: u64, n_frames: usize, n_classes: usize, noise: f64) -> PyResult<Self> {
        let spec = SynthSpec::random(seed, n_frames, n_classes, noise);
        Ok(Self {
            inner: synth_bundle(seed, &spec).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        tgloc_core::save_bundle(&self.inner, path).map_err(py_err)
    }

    /// Violations as strings; empty when the bundle is valid.
    fn validate(&self) -> Vec<String> {
        tgloc_core::validate_bundle(&self.inner).iter().map(|v| v.to_string()).collect()
    }

    #[getter]
    fn video_id(&self) -> String {
        self.inner.video_id.clone()
    }

    #[getter]
    fn n_frames(&self) -> usize {
        self.inner.n_frames()
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.inner.fps
    }

    fn classes(&self) -> Vec<String> {
        self.inner.classes().iter().map(|c| c.id.clone()).collect()
    }

    /// Ground truth as (video_id, t_start, t_end, label).
    fn ground_truth(&self) -> Vec<GtTuple> {
        tgloc_core::results::ground_truth_from(&self.inner)
            .into_iter()
            .map(|g| (g.video_id, g.t_start, g.t_end, g.label))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Bundle(video_id={:?}, n_frames={}, classes={})",
            self.inner.video_id,
            self.inner.n_frames(),
            self.inner.classes().len()
        )
    }
}

#[pyclass(name = "Config", module = "tgloc")]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, then each `key=value` override.
    #[new]
    #[pyo3(signature = (overrides = None))]
    fn new(overrides: Option<Vec<String>>) -> PyResult<Self> {
        let mut inner = RunConfig::default();
        for kv in overrides.unwrap_or_default() {
            inner.apply_override(&kv).map_err(py_err)?;
        }
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::from_text(text).map_err(py_err)?,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(py_err)?;
        next.validate().map_err(py_err)?;
        self.inner = next;
        Ok(())
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("Config({:?})", self.inner.to_text().lines().collect::<Vec<_>>())
    }
}

/// Localizes one bundle; returns (predictions, ranked class ids).
#[pyfunction]
#[pyo3(signature = (bundle, config = None))]
fn localize(py: Python<'_>, bundle: &PyBundle, config: Option<&PyConfig>) -> PyResult<(Vec<PredTuple>, Vec<String>)> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let b = &bundle.inner;
    let r = py.detach(|| tgloc_core::localize(b, &cfg)).map_err(py_err)?;
    let preds = predictions_from(&r.video_id, &r.proposals)
        .into_iter()
        .map(|p| (p.video_id, p.t_start, p.t_end, p.label, p.score))
        .collect();
    Ok((preds, r.ranking.ranked))
}

fn thresholds_of(spec: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
    if let Ok(name) = spec.extract::<String>() {
        return metrics::preset_thresholds(&name).map_err(py_err);
    }
    spec.extract::<Vec<f64>>()
}

/// mAP report. `thresholds` is "thumos", "anet" or a list of floats.
#[pyfunction]
#[pyo3(signature = (predictions, ground_truth, thresholds = None, class_filter = None))]
fn evaluate<'py>(
    py: Python<'py>,
    predictions: Vec<PredTuple>,
    ground_truth: Vec<GtTuple>,
    thresholds: Option<&Bound<'py, PyAny>>,
    class_filter: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let thresholds = match thresholds {
        Some(t) => thresholds_of(t)?,
        None => metrics::thumos_thresholds(),
    };
    let preds: Vec<Prediction> = predictions
        .into_iter()
        .map(|(video_id, t_start, t_end, label, score)| Prediction {
            video_id,
            t_start,
            t_end,
            label,
            score,
        })
        .collect();
    let gts: Vec<GroundTruth> = ground_truth
        .into_iter()
        .map(|(video_id, t_start, t_end, label)| GroundTruth {
            video_id,
            t_start,
            t_end,
            label,
        })
        .collect();
    let filter: Option<BTreeSet<String>> = class_filter.map(|v| v.into_iter().collect());
    let report = metrics::map_report(&preds, &gts, &thresholds, filter.as_ref(), None).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("thresholds", report.thresholds)?;
    out.set_item("map", report.map)?;
    out.set_item("average_map", report.average_map)?;
    let per_class = PyDict::new(py);
    for c in report.classes {
        per_class.set_item(c.class, c.ap)?;
    }
    out.set_item("per_class", per_class)?;
    Ok(out)
}

#[pyfunction]
fn tiou(a: (f64, f64), b: (f64, f64)) -> PyResult<f64> {
    metrics::tiou(a, b).map_err(py_err)
}

/// Greedy per-class NMS over (t_start, t_end, label, confidence) tuples.
#[pyfunction]
fn nms(proposals: Vec<(f64, f64, String, f64)>, threshold: f64) -> Vec<(f64, f64, String, f64)> {
    let props = proposals
        .into_iter()
        .map(|(t_start, t_end, label, confidence)| Proposal {
            t_start,
            t_end,
            label,
            confidence,
        })
        .collect();
    localizer::nms(props, threshold)
        .into_iter()
        .map(|p| (p.t_start, p.t_end, p.label, p.confidence))
        .collect()
}

/// k-means over row embeddings; returns a dict with representative ids,
/// per-row labels and the inertia history.
#[pyfunction]
#[pyo3(signature = (ids, embeddings, s, seed = 0))]
fn cluster_triplets<'py>(
    py: Python<'py>,
    ids: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    s: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let d = embeddings.first().map_or(0, Vec::len);
    if embeddings.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("embedding rows differ in length"));
    }
    let t = Tensor::matrix(embeddings.len(), d, embeddings.concat()).map_err(py_err)?;
    let summary = guidance::cluster_triplets(&ids, &t, s, seed).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("representative_ids", summary.representative_ids)?;
    out.set_item("labels", summary.labels)?;
    out.set_item("inertia_history", summary.inertia_history)?;
    Ok(out)
}

/// (flagged, total, fraction) over `captions`; default lexicon when none.
#[pyfunction]
#[pyo3(signature = (captions, lexicon = None))]
fn ambiguity_scan(captions: Vec<String>, lexicon: Option<Vec<String>>) -> PyResult<(usize, usize, f64)> {
    let lexicon = lexicon.unwrap_or_else(|| DEFAULT_LEXICON.iter().map(|s| s.to_string()).collect());
    let r = guidance::ambiguity_scan(&captions, &lexicon).map_err(py_err)?;
    Ok((r.flagged_captions, r.total_captions, r.fraction))
}

/// Max relative error per gradient check, and whether all passed.
#[pyfunction]
#[pyo3(signature = (seed = 0, instances = 50))]
fn gradcheck(py: Python<'_>, seed: u64, instances: usize) -> PyResult<(Vec<(String, f64)>, bool)> {
    let opts = GradcheckOptions {
        seed,
        instances,
        ..Default::default()
    };
    let report = py.detach(|| run_gradcheck(&opts)).map_err(py_err)?;
    let passed = report.passed();
    Ok((report.checks.into_iter().map(|c| (c.name, c.max_rel_error)).collect(), passed))
}

#[pymodule]
fn tgloc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBundle>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(localize, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(tiou, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_triplets, m)?)?;
    m.add_function(wrap_pyfunction!(ambiguity_scan, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
