//! Python bindings: simulation, datasets, training, evaluation and influence extraction.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use inf2vec::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint as CoreCheckpoint};
use inf2vec::eval::{self, TruthMode};
use inf2vec::events::{self, Event, EventSequence, SplitSpec};
use inf2vec::hawkes::{self, Preset};
use inf2vec::model::ModelConfig;
use inf2vec::train::{self, TrainConfig};

fn py_err(e: inf2vec::Error) -> PyErr {
    match e {
        inf2vec::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

type Options<'py> = Option<BTreeMap<String, Bound<'py, PyAny>>>;

fn apply<T>(
    target: &mut T,
    options: Options<'_>,
    set: fn(&mut T, &str, &str) -> inf2vec::Result<()>,
) -> PyResult<()> {
    for (k, v) in options.unwrap_or_default() {
        let text = v.str()?.to_string();
        set(target, &k, &text).map_err(py_err)?;
    }
    Ok(())
}

/// Multivariate Hawkes process with exponential kernels.
#[pyclass(name = "HawkesParams", from_py_object)]
#[derive(Clone)]
struct PyHawkesParams(hawkes::HawkesParams);

#[pymethods]
impl PyHawkesParams {
    #[new]
    fn new(mu: Vec<f64>, alpha: Vec<Vec<f64>>, beta: Vec<Vec<f64>>) -> PyResult<Self> {
        hawkes::HawkesParams::new(mu, alpha, beta).map(Self).map_err(py_err)
    }

    /// Built-in parameter set: "haw5", "haw9" or "hawc9".
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Preset::from_name(name)
            .map(|p| Self(p.params()))
            .ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?}")))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        hawkes::HawkesParams::from_json(text).map(Self).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(py_err)
    }

    #[getter]
    fn num_types(&self) -> usize {
        self.0.num_types()
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.0.mu().to_vec()
    }

    #[getter]
    fn alpha(&self) -> Vec<Vec<f64>> {
        self.0.alpha().to_vec()
    }

    #[getter]
    fn beta(&self) -> Vec<Vec<f64>> {
        self.0.beta().to_vec()
    }

    fn spectral_radius(&self) -> f64 {
        self.0.spectral_radius()
    }

    fn stationary_rate(&self) -> PyResult<Vec<f64>> {
        self.0.stationary_rate().map_err(py_err)
    }

    /// Mean negative log-likelihood per sequence.
    fn nll(&self, data: &PyDataset) -> f64 {
        self.0.nll(&data.0)
    }

    fn simulate(&self, num_seqs: usize, horizon: f64, seed: u64) -> PyResult<PyDataset> {
        hawkes::simulate_dataset(&self.0, num_seqs, horizon, seed)
            .map(PyDataset)
            .map_err(py_err)
    }
}

/// A set of event sequences over `num_types` types.
#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset(events::Dataset);

#[pymethods]
impl PyDataset {
    /// Builds a dataset from `[(seq_id, [(type, time), ...], horizon), ...]`.
    #[new]
    fn new(num_types: usize, sequences: Vec<(String, Vec<(usize, f64)>, f64)>) -> PyResult<Self> {
        let seqs = sequences
            .into_iter()
            .map(|(id, evs, horizon)| {
                let evs = evs.into_iter().map(|(k, t)| Event::new(k, t)).collect();
                EventSequence::new(id, evs, horizon, num_types)
            })
            .collect::<inf2vec::Result<Vec<_>>>()
            .map_err(py_err)?;
        events::Dataset::new(num_types, seqs).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load_jsonl(path: &str, num_types: usize) -> PyResult<Self> {
        events::load_jsonl(path, num_types).map(Self).map_err(py_err)
    }

    fn save_jsonl(&self, path: &str) -> PyResult<()> {
        events::save_jsonl(&self.0, path).map_err(py_err)
    }

    #[getter]
    fn num_types(&self) -> usize {
        self.0.num_types
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn num_events(&self) -> usize {
        self.0.num_events()
    }

    fn type_counts(&self) -> Vec<usize> {
        self.0.type_counts()
    }

    /// `[(seq_id, [(type, time), ...], horizon), ...]`
    fn sequences(&self) -> Vec<(String, Vec<(usize, f64)>, f64)> {
        self.0
            .sequences
            .iter()
            .map(|s| {
                (
                    s.seq_id.clone(),
                    s.events.iter().map(|e| (e.type_id, e.time)).collect(),
                    s.horizon,
                )
            })
            .collect()
    }

    #[pyo3(signature = (seed, ratios = (0.6, 0.2, 0.2)))]
    fn split(&self, seed: u64, ratios: (f64, f64, f64)) -> PyResult<(Self, Self, Self)> {
        let spec = SplitSpec::new([ratios.0, ratios.1, ratios.2], seed).map_err(py_err)?;
        let (a, b, c) = events::split_dataset(&self.0, &spec).map_err(py_err)?;
        Ok((Self(a), Self(b), Self(c)))
    }
}

/// Trained (or freshly initialized) model plus the epoch it was taken from.
#[pyclass(name = "Checkpoint", from_py_object)]
#[derive(Clone)]
struct PyCheckpoint(CoreCheckpoint);

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_checkpoint(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.0, path).map_err(py_err)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.0.epoch
    }

    /// Model configuration as a JSON string.
    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(self.0.config()).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Mean NLL per event.
    fn nll(&self, data: &PyDataset) -> PyResult<f64> {
        train::evaluate_nll(&self.0.model, &data.0).map_err(py_err)
    }

    /// `(f1, mae, nll)`; F1 and MAE are None for the intensity decoder.
    fn evaluate(&self, data: &PyDataset) -> PyResult<(Option<f64>, Option<f64>, f64)> {
        let r = eval::evaluate_model(&self.0.model, &data.0).map_err(py_err)?;
        Ok((r.f1, r.mae, r.nll))
    }

    /// Predicted next type and absolute time after `history = [(type, time), ...]`.
    fn predict_next(&self, history: Vec<(usize, f64)>) -> PyResult<(usize, f64)> {
        let evs: Vec<Event> = history.into_iter().map(|(k, t)| Event::new(k, t)).collect();
        self.0.model.predict_next(&evs).map_err(py_err)
    }

    /// `(scores, norms)`, each K x K.
    fn influence_matrix(&self) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let m = eval::influence_matrix(&self.0.model).map_err(py_err)?;
        Ok((m.scores, m.norms))
    }

    /// `(per_row, mean_abs, per_row_signed, mean_abs_signed)` against the truth's alpha rows.
    #[pyo3(signature = (truth, alpha_beta_pca = false))]
    fn truth_alignment(
        &self,
        truth: &PyHawkesParams,
        alpha_beta_pca: bool,
    ) -> PyResult<(Vec<f64>, f64, Vec<f64>, f64)> {
        let m = eval::influence_matrix(&self.0.model).map_err(py_err)?;
        let mode = if alpha_beta_pca {
            TruthMode::AlphaBetaPca
        } else {
            TruthMode::Alpha
        };
        let a = eval::truth_alignment(&m, &truth.0, mode).map_err(py_err)?;
        Ok((a.per_row, a.mean_abs, a.per_row_sign_flip, a.mean_abs_sign_flip))
    }
}

/// Trains a model; returns the best checkpoint and `[(epoch, train_nll, valid_nll), ...]`.
///
/// `model` and `options` are dicts of overrides, e.g. `{"mode": "global"}` and `{"lr": 0.005}`.
#[pyfunction]
#[pyo3(signature = (train_data, valid_data, seed, model = None, options = None))]
fn train_model<'py>(
    train_data: &PyDataset,
    valid_data: &PyDataset,
    seed: u64,
    model: Options<'py>,
    options: Options<'py>,
) -> PyResult<(PyCheckpoint, Vec<(usize, f64, f64)>)> {
    let mut cfg = ModelConfig::new(train_data.0.num_types);
    apply(&mut cfg, model, ModelConfig::set)?;
    let mut tc = TrainConfig::default();
    apply(&mut tc, options, TrainConfig::set)?;
    tc.seed = seed;
    let out = train::train(cfg, &train_data.0, &valid_data.0, &tc).map_err(py_err)?;
    let history = out
        .history
        .iter()
        .map(|r| (r.epoch, r.train_nll, r.valid_nll))
        .collect();
    Ok((PyCheckpoint(out.best), history))
}

#[pyfunction]
fn weighted_f1(true_types: Vec<usize>, predicted_types: Vec<usize>) -> PyResult<f64> {
    if true_types.len() != predicted_types.len() {
        return Err(PyValueError::new_err("label and prediction lengths differ"));
    }
    let records: Vec<eval::PredictionRecord> = true_types
        .into_iter()
        .zip(predicted_types)
        .map(|(t, p)| eval::PredictionRecord {
            true_type: t,
            predicted_type: p,
            true_tau: 0.0,
            predicted_tau: 0.0,
        })
        .collect();
    eval::weighted_f1(&records).map_err(py_err)
}

#[pyfunction]
fn pca_reduce_1d(vectors: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    eval::pca_reduce_1d(&vectors).map_err(py_err)
}

#[pymodule]
mod inf2vec_py {
    #[pymodule_export]
    use super::{
        pca_reduce_1d, train_model, weighted_f1, PyCheckpoint, PyDataset, PyHawkesParams,
    };
}
