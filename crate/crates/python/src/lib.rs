//! Python bindings: datasets, models, checkpoints and the metric helpers.

use std::path::PathBuf;

use aga_core::checkpoint::Checkpoint;
use aga_core::config::RunConfig;
use aga_core::data::Dataset as CoreDataset;
use aga_core::evaluate::{evaluate, EvalOptions};
use aga_core::metrics::{self, ConfusionMatrix};
use aga_core::model::Model as CoreModel;
use aga_core::{hmm, Error, Tensor};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Data(_) | Error::Format(_) => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(py_err)
}

fn parse_config(text: &str) -> PyResult<RunConfig> {
    RunConfig::parse(text).map_err(py_err)
}

/// A normalized, labeled feature table.
#[pyclass(module = "aga", skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    /// Simulates and featurizes a dataset from run-config TOML text.
    #[staticmethod]
    #[pyo3(signature = (config = "", seed = None))]
    fn generate(config: &str, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = parse_config(config)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate().map_err(py_err)?;
        Ok(Self { inner: cfg.synthesize().map_err(py_err)?.dataset })
    }

    /// Reads the binary or CSV format (detected from the magic bytes).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: CoreDataset::load(&path).map_err(py_err)? })
    }

    fn save_binary(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(path)?;
        self.inner.write_binary(file).map_err(py_err)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(path)?;
        self.inner.write_text(file).map_err(py_err)
    }

    fn slice(&self, start: usize, end: usize) -> PyResult<Self> {
        if start > end || end > self.inner.len() {
            return Err(PyValueError::new_err(format!("bad range {start}..{end} for {} rows", self.inner.len())));
        }
        Ok(Self { inner: self.inner.slice(start, end) })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|t| self.inner.row(t).to_vec()).collect()
    }

    #[getter]
    fn mid(&self) -> Vec<f64> {
        self.inner.mid.clone()
    }

    #[getter]
    fn timestamps(&self) -> Vec<u64> {
        self.inner.timestamps.clone()
    }

    /// Movement labels as -1/0/+1, `None` where the horizon runs off the end.
    #[getter]
    fn labels(&self) -> Vec<Option<i32>> {
        self.inner.label.iter().map(|l| l.map(|l| l.sign())).collect()
    }

    #[getter]
    fn true_regime(&self) -> Vec<Option<usize>> {
        self.inner.true_regime.clone()
    }
}

/// Encoder, neural HMM and classifier head.
#[pyclass(module = "aga")]
struct Model {
    inner: CoreModel,
    feature_names: Vec<String>,
}

#[pymethods]
impl Model {
    /// Builds a freshly initialized model from the `[model]` section of run-config TOML.
    #[new]
    #[pyo3(signature = (config = "", feature_names = None, seed = None))]
    fn new(config: &str, feature_names: Option<Vec<String>>, seed: Option<u64>) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        let names = feature_names.unwrap_or(cfg.features.columns);
        let inner = CoreModel::new(cfg.model, names.len(), seed.unwrap_or(cfg.seed)).map_err(py_err)?;
        Ok(Self { inner, feature_names: names })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(py_err)?;
        Ok(Self { inner: ck.model, feature_names: ck.feature_names })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::new(self.inner.clone(), self.feature_names.clone()).save(&path).map_err(py_err)
    }

    /// Checkpoint bytes (`AGAH` format).
    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        Checkpoint::new(self.inner.clone(), self.feature_names.clone()).to_bytes().map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn warmup(&self) -> usize {
        self.inner.config.warmup()
    }

    #[getter]
    fn states(&self) -> usize {
        self.inner.config.states
    }

    fn param_names(&self) -> Vec<(String, (usize, usize))> {
        self.inner.param_names()
    }

    /// Trains in place with the `[train]` section of run-config TOML; returns per-epoch records.
    #[pyo3(signature = (dataset, config = "", seed = 0))]
    fn train<'py>(&mut self, py: Python<'py>, dataset: &Dataset, config: &str, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg = parse_config(config)?;
        let hist = aga_core::train::train(&mut self.inner, &dataset.inner, &cfg.train, seed, None).map_err(py_err)?;
        hist.epochs
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("train_total", r.train.total)?;
                d.set_item("train_nll", r.train.nll)?;
                d.set_item("val_total", r.validation.total)?;
                d.set_item("val_nll", r.validation.nll)?;
                d.set_item("learning_rate", r.learning_rate)?;
                d.set_item("best", Some(r.epoch) == hist.best_epoch)?;
                Ok(d)
            })
            .collect()
    }

    /// Full-sequence inference from the first post-warm-up row.
    fn infer<'py>(&self, py: Python<'py>, dataset: &Dataset) -> PyResult<Bound<'py, PyDict>> {
        let prep = self.inner.prepare(&dataset.inner).map_err(py_err)?;
        let inf = self.inner.infer(&prep).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("start", inf.start)?;
        d.set_item("log_likelihood", inf.log_likelihood)?;
        d.set_item("filtered", rows(&inf.filtered))?;
        d.set_item("smoothed", rows(&inf.smoothed))?;
        d.set_item("viterbi", inf.viterbi.clone())?;
        d.set_item("class_probs", rows(&inf.class_probs))?;
        d.set_item("predictions", inf.predictions.clone())?;
        d.set_item("gate_mean", inf.gate_mean.clone())?;
        d.set_item("head_entropy", rows(&inf.head_entropy))?;
        d.set_item("tau", inf.tau.clone())?;
        d.set_item("sigma", prep.sigma[inf.start..].to_vec())?;
        Ok(d)
    }

    /// Scores rows from `from_row` on; `config` supplies `[trade]`.
    #[pyo3(signature = (dataset, config = "", from_row = 0, latency_steps = 0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &Dataset,
        config: &str,
        from_row: usize,
        latency_steps: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = parse_config(config)?;
        let opts = EvalOptions { from: from_row, latency_steps, latency_warmup: cfg.eval.latency_warmup };
        let ev = evaluate(&self.inner, &dataset.inner, &cfg.trade, &opts).map_err(py_err)?;
        let r = &ev.report;
        let d = PyDict::new(py);
        d.set_item("steps", r.steps)?;
        d.set_item("accuracy", r.accuracy)?;
        d.set_item("mcc", r.mcc)?;
        d.set_item("regime_f1", r.regime_f1)?;
        d.set_item("per_regime_f1", r.per_regime_f1.clone())?;
        d.set_item("nll_per_step", r.nll_per_step)?;
        d.set_item("sharpe", r.sharpe)?;
        d.set_item("sharpe_annualized", r.sharpe_annualized)?;
        d.set_item("latency_p50_ms", r.latency_p50_ms)?;
        d.set_item("latency_p99_ms", r.latency_p99_ms)?;
        d.set_item("pnl", ev.trade.pnl.clone())?;
        Ok(d)
    }
}

/// Forward algorithm: `(log_likelihood, filtered)` for `T×K` emissions,
/// `T×K²` row-major transitions (row 0 unused) and a length-K initial log distribution.
#[pyfunction]
fn hmm_forward(log_emit: Vec<Vec<f64>>, log_trans: Vec<Vec<f64>>, log_init: Vec<f64>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (ll, f) = hmm::forward(&tensor(log_emit)?, &tensor(log_trans)?, &log_init).map_err(py_err)?;
    Ok((ll, rows(&f)))
}

#[pyfunction]
fn hmm_viterbi(log_emit: Vec<Vec<f64>>, log_trans: Vec<Vec<f64>>, log_init: Vec<f64>) -> PyResult<Vec<usize>> {
    hmm::viterbi(&tensor(log_emit)?, &tensor(log_trans)?, &log_init).map_err(py_err)
}

/// Permutation-aligned macro F1: `(f1, mapping)`.
#[pyfunction]
fn regime_f1(decoded: Vec<usize>, truth: Vec<usize>, k: usize) -> PyResult<(f64, Vec<usize>)> {
    let r = metrics::regime_f1(&decoded, &truth, k).map_err(py_err)?;
    Ok((r.f1, r.mapping))
}

#[pyfunction]
fn mcc(truth: Vec<usize>, pred: Vec<usize>, k: usize) -> PyResult<f64> {
    Ok(metrics::mcc(&ConfusionMatrix::from_pairs(&truth, &pred, k).map_err(py_err)?))
}

/// Per-step Sharpe of a position ledger.
#[pyfunction]
#[pyo3(signature = (positions, mid, fee_bps = 1.0))]
fn sharpe(positions: Vec<i32>, mid: Vec<f64>, fee_bps: f64) -> PyResult<f64> {
    let cfg = metrics::TradeSimConfig { fee_bps, ..Default::default() };
    Ok(metrics::sharpe_sim(&positions, &mid, &cfg).map_err(py_err)?.sharpe)
}

#[pymodule]
fn aga(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(hmm_forward, m)?)?;
    m.add_function(wrap_pyfunction!(hmm_viterbi, m)?)?;
    m.add_function(wrap_pyfunction!(regime_f1, m)?)?;
    m.add_function(wrap_pyfunction!(mcc, m)?)?;
    m.add_function(wrap_pyfunction!(sharpe, m)?)?;
    Ok(())
}
