//! Python module `softseg`: benchmarks, estimators, evaluation and theory checks.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde_json::Value;

use softseg_core::models::fit_method;
use softseg_core::theory::{run_theory_suite, TheorySuiteConfig};
use softseg_core::{BenchConfig, ContextVector, Family, FitConfig, Method, TruthMode};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_value(Value::String(s.to_string())).map_err(err)
}

fn context(signal: Vec<f64>, nuisance: Vec<f64>) -> PyResult<ContextVector> {
    ContextVector::new(signal, nuisance).map_err(err)
}

/// Overlay a JSON object of settings on the defaults, refusing unknown keys.
fn fit_config(json: Option<&str>, seed: u64) -> PyResult<FitConfig> {
    let mut value = serde_json::to_value(FitConfig::default()).map_err(err)?;
    if let Some(text) = json {
        let extra: serde_json::Map<String, Value> = serde_json::from_str(text).map_err(err)?;
        let obj = value.as_object_mut().expect("object");
        for (k, v) in extra {
            if !obj.contains_key(&k) {
                return Err(err(format!("unknown fit setting {k:?}")));
            }
            obj.insert(k, v);
        }
    }
    let mut cfg: FitConfig = serde_json::from_value(value).map_err(err)?;
    cfg.seed = seed;
    Ok(cfg)
}

#[pyclass(name = "DecisionLibrary", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLibrary {
    inner: softseg_core::DecisionLibrary,
}

#[pyclass(name = "Regret", frozen, get_all)]
struct PyRegret {
    oracle_index: usize,
    chosen_index: usize,
    regret: f64,
    margin_gamma: f64,
    perturb_delta: f64,
}

#[pymethods]
impl PyRegret {
    fn __repr__(&self) -> String {
        format!(
            "Regret(oracle_index={}, chosen_index={}, regret={}, margin_gamma={}, perturb_delta={})",
            self.oracle_index, self.chosen_index, self.regret, self.margin_gamma, self.perturb_delta
        )
    }
}

#[pymethods]
impl PyLibrary {
    #[new]
    fn new(factors: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self { inner: softseg_core::DecisionLibrary::new(factors).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn factors(&self) -> Vec<Vec<f64>> {
        self.inner.factors().to_vec()
    }

    fn scores(&self, w: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.scores(&w).map_err(err)
    }

    /// Index of the highest-scoring decision; ties go to the lowest index.
    fn argmax(&self, w: Vec<f64>) -> PyResult<usize> {
        softseg_core::argmax_decision(&w, &self.inner).map_err(err)
    }

    fn regret(&self, w_star: Vec<f64>, w_hat: Vec<f64>) -> PyResult<PyRegret> {
        let r = softseg_core::regret(&w_star, &w_hat, &self.inner).map_err(err)?;
        Ok(PyRegret {
            oracle_index: r.oracle_index,
            chosen_index: r.chosen_index,
            regret: r.regret,
            margin_gamma: r.margin_gamma,
            perturb_delta: r.perturb_delta,
        })
    }
}

#[pyclass(name = "Benchmark", frozen)]
struct PyBenchmark {
    inner: softseg_core::Benchmark,
}

#[pymethods]
impl PyBenchmark {
    /// Generate a seeded instance. `config` is a JSON object of benchmark
    /// fields; anything left out takes the Panel-A value.
    #[staticmethod]
    #[pyo3(signature = (seed = 0, family = "two_expert", mode = "soft", config = None))]
    fn generate(seed: u64, family: &str, mode: &str, config: Option<&str>) -> PyResult<Self> {
        let mut bench: BenchConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(err)?,
            None => BenchConfig::default(),
        };
        bench.seed = seed;
        let family: Family = parse_enum(family)?;
        let mode: TruthMode = parse_enum(mode)?;
        Ok(Self { inner: softseg_core::benchgen::generate_benchmark(&bench, family, mode).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: softseg_core::Benchmark::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn n_train(&self) -> usize {
        self.inner.train.len()
    }

    #[getter]
    fn n_val(&self) -> usize {
        self.inner.val.len()
    }

    #[getter]
    fn n_eval(&self) -> usize {
        self.inner.eval.len()
    }

    #[getter]
    fn library(&self) -> PyLibrary {
        PyLibrary { inner: self.inner.library.clone() }
    }

    #[getter]
    fn config(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config).map_err(err)
    }

    /// Evaluation contexts as `(signal, nuisance)` pairs.
    fn eval_contexts(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.inner.eval.iter().map(|p| (p.context.signal().to_vec(), p.context.nuisance().to_vec())).collect()
    }

    fn eval_weights(&self) -> Vec<Vec<f64>> {
        self.inner.eval.iter().map(|p| p.weight.clone()).collect()
    }

    /// Logged training records as `(signal, nuisance, decision_index, outcome)`.
    fn train_records(&self) -> Vec<(Vec<f64>, Vec<f64>, usize, u8)> {
        self.inner
            .train
            .records
            .iter()
            .map(|r| (r.context.signal().to_vec(), r.context.nuisance().to_vec(), r.decision_index, r.outcome))
            .collect()
    }

    #[pyo3(signature = (signal, nuisance = Vec::new()))]
    fn true_weight(&self, signal: Vec<f64>, nuisance: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.truth.weight(&context(signal, nuisance)?).map_err(err)
    }
}

#[pyclass(name = "WeightModel", frozen)]
struct PyModel {
    inner: softseg_core::WeightModel,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count
    }

    #[getter]
    fn fit_seconds(&self) -> f64 {
        self.inner.fit_seconds
    }

    #[getter]
    fn val_loss(&self) -> f64 {
        self.inner.val_loss
    }

    #[getter]
    fn selected(&self) -> std::collections::BTreeMap<String, String> {
        self.inner.selected.clone()
    }

    #[pyo3(signature = (signal, nuisance = Vec::new()))]
    fn predict_w(&self, signal: Vec<f64>, nuisance: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = context(signal, nuisance)?;
        if x.dim() != self.inner.d_x {
            return Err(err(format!("context has {} coordinates, model expects {}", x.dim(), self.inner.d_x)));
        }
        Ok(self.inner.predict_w(&x))
    }

    /// Gate probabilities for gated classes, `None` otherwise.
    #[pyo3(signature = (signal, nuisance = Vec::new()))]
    fn gate(&self, signal: Vec<f64>, nuisance: Vec<f64>) -> PyResult<Option<Vec<f64>>> {
        Ok(self.inner.gate(&context(signal, nuisance)?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: softseg_core::WeightModel::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("WeightModel(name={:?}, params={}, selected={:?})", self.inner.name, self.inner.param_count, self.inner.selected_string())
    }
}

#[pyclass(name = "EvalSummary", frozen, get_all)]
struct PyEval {
    weight_mse: f64,
    mean_regret: f64,
    match_rate: f64,
    gate_effective_experts: Option<f64>,
    transfer_violations: usize,
}

#[pymethods]
impl PyEval {
    fn __repr__(&self) -> String {
        format!(
            "EvalSummary(weight_mse={}, mean_regret={}, match_rate={}, gate_effective_experts={:?}, transfer_violations={})",
            self.weight_mse, self.mean_regret, self.match_rate, self.gate_effective_experts, self.transfer_violations
        )
    }
}

/// Names accepted by `fit`.
#[pyfunction]
fn methods() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.name()).collect()
}

/// Fit `method` on the benchmark's training and validation splits.
/// `config` is a JSON object overriding fit settings.
#[pyfunction]
#[pyo3(signature = (method, benchmark, seed = 0, config = None))]
fn fit(py: Python<'_>, method: &str, benchmark: &PyBenchmark, seed: u64, config: Option<&str>) -> PyResult<PyModel> {
    let method: Method = method.parse().map_err(err)?;
    let cfg = fit_config(config, seed)?;
    let b = &benchmark.inner;
    let model = py.detach(|| fit_method(method, &b.train, &b.val, &cfg)).map_err(err)?;
    Ok(PyModel { inner: model })
}

/// Weight error and exact regret over the benchmark's evaluation set.
#[pyfunction]
fn evaluate(model: &PyModel, benchmark: &PyBenchmark) -> PyResult<PyEval> {
    let e = softseg_core::evaluate(&model.inner, &benchmark.inner.eval, &benchmark.inner.library).map_err(err)?;
    Ok(PyEval {
        weight_mse: e.weight_mse,
        mean_regret: e.mean_regret,
        match_rate: e.match_rate,
        gate_effective_experts: e.gate_effective_experts,
        transfer_violations: e.transfer_violations,
    })
}

/// Paired bootstrap of `mean(a − b)` over seeds: `(mean_diff, ci_lo, ci_hi)`.
#[pyfunction]
#[pyo3(signature = (a, b, resamples = 5000, seed = 0))]
fn paired_bootstrap(a: Vec<f64>, b: Vec<f64>, resamples: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
    let r = softseg_core::paired_bootstrap(&a, &b, ("a", "b"), resamples, seed).map_err(err)?;
    Ok((r.mean_diff, r.ci_lo, r.ci_hi))
}

/// Run the theory checks; returns `(name, bound, realized, pass)` tuples.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn theory_checks(py: Python<'_>, config: Option<&str>) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let cfg: TheorySuiteConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(err)?,
        None => TheorySuiteConfig::default(),
    };
    let checks = py.detach(|| run_theory_suite(&cfg)).map_err(err)?;
    Ok(checks.into_iter().map(|c| (c.name, c.bound, c.realized, c.pass)).collect())
}

#[pymodule]
fn softseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLibrary>()?;
    m.add_class::<PyRegret>()?;
    m.add_class::<PyBenchmark>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEval>()?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(paired_bootstrap, m)?)?;
    m.add_function(wrap_pyfunction!(theory_checks, m)?)?;
    Ok(())
}
