//! Python bindings. Errors from the core surface as `ValueError`; long
//! experiment runs release the interpreter lock.

use fedsb_core::domains::budget_indices;
use fedsb_core::experiment::{self, Cell, GridOutcome};
use fedsb_core::{
    ClassDistribution, DomainDataset, FedError, Matrix, Mlp, ParamVector, RunConfig,
    SmoothingCoefficient, SyntheticTaskSpec,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: FedError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn eps(value: f64) -> PyResult<SmoothingCoefficient> {
    SmoothingCoefficient::new(value).map_err(err)
}

fn params_list(list: Vec<Vec<f64>>, layer_sizes: &[usize]) -> PyResult<Vec<ParamVector>> {
    list.into_iter()
        .map(|v| ParamVector::new(v, layer_sizes.to_vec()).map_err(err))
        .collect()
}

/// Smoothed one-hot target for class `y` out of `class_count`.
#[pyfunction]
#[pyo3(signature = (y, class_count, epsilon = 0.1))]
fn smooth_labels(y: usize, class_count: usize, epsilon: f64) -> PyResult<Vec<f64>> {
    let d = fedsb_core::smooth_labels(y, class_count, eps(epsilon)?).map_err(err)?;
    Ok(d.as_slice().to_vec())
}

/// `(nll, smooth, total)` for prediction `probs`, true class `y`.
#[pyfunction]
#[pyo3(signature = (probs, y, epsilon = 0.1))]
fn decompose_loss(probs: Vec<f64>, y: usize, epsilon: f64) -> PyResult<(f64, f64, f64)> {
    let p = ClassDistribution::new(probs).map_err(err)?;
    let parts = fedsb_core::decompose_loss(&p, y, eps(epsilon)?).map_err(err)?;
    Ok((parts.nll, parts.smooth, parts.total))
}

#[pyfunction]
fn aggregate_uniform(params: Vec<Vec<f64>>, layer_sizes: Vec<usize>) -> PyResult<Vec<f64>> {
    let list = params_list(params, &layer_sizes)?;
    Ok(fedsb_core::aggregate_uniform(&list).map_err(err)?.into_values())
}

#[pyfunction]
fn aggregate_weighted(params: Vec<Vec<f64>>, sizes: Vec<usize>, layer_sizes: Vec<usize>) -> PyResult<Vec<f64>> {
    let list = params_list(params, &layer_sizes)?;
    Ok(fedsb_core::aggregate_weighted(&list, &sizes).map_err(err)?.into_values())
}

/// Indices of a budget-`budget` working set drawn from `length` samples.
#[pyfunction]
fn budget_resample(length: usize, budget: usize, seed: u64) -> PyResult<Vec<usize>> {
    budget_indices(length, budget, seed).map_err(err)
}

#[pyclass(name = "Domain", module = "fedsb", frozen)]
struct PyDomain {
    inner: DomainDataset,
}

#[pymethods]
impl PyDomain {
    #[getter]
    fn domain_id(&self) -> &str {
        self.inner.domain_id()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(features, labels)` as nested lists.
    fn arrays(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        self.inner
            .samples()
            .iter()
            .map(|s| (s.features.clone(), s.label))
            .unzip()
    }

    fn __repr__(&self) -> String {
        format!("Domain({:?}, n={})", self.inner.domain_id(), self.inner.len())
    }
}

/// The default rotated-cluster task, optionally with custom sizes/angles.
#[pyfunction]
#[pyo3(signature = (seed, domain_sizes = None, domain_angles = None))]
fn generate_task(seed: u64, domain_sizes: Option<Vec<usize>>, domain_angles: Option<Vec<f64>>) -> PyResult<Vec<PyDomain>> {
    let mut spec = SyntheticTaskSpec::default();
    if let Some(s) = domain_sizes {
        spec.domain_sizes = s;
    }
    if let Some(a) = domain_angles {
        spec.domain_angles = a;
    }
    let task = fedsb_core::generate_task(&spec, seed).map_err(err)?;
    Ok(task.into_iter().map(|inner| PyDomain { inner }).collect())
}

#[pyclass(name = "Model", module = "fedsb")]
struct PyModel {
    inner: Mlp,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (layer_sizes, seed = 0))]
    fn new(layer_sizes: Vec<usize>, seed: u64) -> PyResult<Self> {
        Ok(PyModel {
            inner: Mlp::init(&layer_sizes, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_params(values: Vec<f64>, layer_sizes: Vec<usize>) -> PyResult<Self> {
        Ok(PyModel {
            inner: Mlp::from_slice(&values, &layer_sizes).map_err(err)?,
        })
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.layer_sizes().to_vec()
    }

    fn params(&self) -> Vec<f64> {
        self.inner.to_params().into_values()
    }

    /// Softmax probabilities, one row per input.
    fn forward(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = Matrix::from_rows(&inputs).map_err(err)?;
        let p = fedsb_core::softmax(&self.inner.forward(&x).map_err(err)?);
        Ok(p.iter_rows().map(<[f64]>::to_vec).collect())
    }

    fn predict(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let x = Matrix::from_rows(&inputs).map_err(err)?;
        self.inner.predict(&x).map_err(err)
    }

    /// Mean smoothed cross-entropy and its gradient (flat, same layout as `params`).
    #[pyo3(signature = (inputs, labels, epsilon = 0.1))]
    fn loss_and_grads(&self, inputs: Vec<Vec<f64>>, labels: Vec<usize>, epsilon: f64) -> PyResult<(f64, Vec<f64>)> {
        let x = Matrix::from_rows(&inputs).map_err(err)?;
        let e = eps(epsilon)?;
        let m = self.inner.class_count();
        let targets = labels
            .iter()
            .map(|&y| fedsb_core::smooth_labels(y, m, e))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let (loss, grads) = self.inner.loss_and_grads(&x, &targets).map_err(err)?;
        Ok((loss, grads.into_values()))
    }
}

fn summary_dict<'py>(py: Python<'py>, outcome: &GridOutcome) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    for s in &outcome.summary {
        let cell = PyDict::new(py);
        for (d, acc) in &s.domains {
            cell.set_item(d, acc)?;
        }
        cell.set_item(experiment::AVE, s.ave)?;
        out.set_item(&s.cell, cell)?;
    }
    Ok(out)
}

/// Parse a config file body and run one of the grids.
///
/// `kind` is `"run"`, `"ablation"` or `"sensitivity"`. Returns
/// `(summary, csv)` where summary maps cell -> {domain: accuracy, "ave": mean}.
/// Nothing is written to disk.
#[pyfunction]
#[pyo3(signature = (config, kind = "run", quick = false, seed = None))]
fn run<'py>(py: Python<'py>, config: &str, kind: &str, quick: bool, seed: Option<u64>) -> PyResult<(Bound<'py, PyDict>, String)> {
    let mut cfg: RunConfig = fedsb_core::parse_config(config.as_bytes()).map_err(err)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    if quick {
        cfg = cfg.quick();
    }
    let cells: Vec<Cell> = match kind {
        "run" => vec![experiment::single_cell(&cfg)],
        "ablation" => experiment::ablation_cells(&cfg),
        "sensitivity" => experiment::sensitivity_cells(&cfg),
        other => return Err(PyValueError::new_err(format!("unknown kind {other:?}"))),
    };
    let outcome = py.detach(|| experiment::run_grid(&cfg, &cells)).map_err(err)?;
    Ok((summary_dict(py, &outcome)?, experiment::to_csv(&outcome.rows)))
}

#[pymodule]
fn fedsb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(smooth_labels, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_loss, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_weighted, m)?)?;
    m.add_function(wrap_pyfunction!(budget_resample, m)?)?;
    m.add_function(wrap_pyfunction!(generate_task, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<PyDomain>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
