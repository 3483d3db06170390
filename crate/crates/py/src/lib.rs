//! Python bindings: the `modcell` extension module.
//!
//! Exposes the main operations — spec validation, a simulated workcell with
//! its executor (`SimLab`), and the bundled applications — with plain dicts
//! and lists crossing the boundary (everything serializable goes through
//! JSON-shaped data).

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use indexmap::IndexMap;
use pyo3::exceptions::{PyRuntimeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyString};
use serde_json::Value;

use modcell::apps;
use modcell::events::EventLog;
use modcell::exec::{Executor, ExecutorOptions, SubmitError};
use modcell::sim::{SimOptions, SimWorkcell};
use modcell::specs::{parse_workcell, parse_workflow, WorkcellSpec, WorkflowSpec};

// ---------------------------------------------------------------- JSON glue

fn json_to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py).unwrap().into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py).unwrap().into_any()
            }
        }
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (key, item) in map {
                dict.set_item(key, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn py_to_json(value: &Bound<'_, PyAny>) -> PyResult<Value> {
    if value.is_none() {
        return Ok(Value::Null);
    }
    if let Ok(b) = value.cast::<PyBool>() {
        return Ok(Value::Bool(b.is_true()));
    }
    if let Ok(i) = value.extract::<i64>() {
        return Ok(Value::from(i));
    }
    if let Ok(f) = value.extract::<f64>() {
        return Ok(Value::from(f));
    }
    if let Ok(s) = value.extract::<String>() {
        return Ok(Value::String(s));
    }
    if let Ok(dict) = value.cast::<PyDict>() {
        let mut map = serde_json::Map::new();
        for (key, item) in dict.iter() {
            map.insert(key.extract::<String>()?, py_to_json(&item)?);
        }
        return Ok(Value::Object(map));
    }
    if let Ok(items) = value.try_iter() {
        let mut list = Vec::new();
        for item in items {
            list.push(py_to_json(&item?)?);
        }
        return Ok(Value::Array(list));
    }
    Err(PyTypeError::new_err(format!(
        "cannot convert {} to JSON-shaped data",
        value.get_type().name()?
    )))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_value(value)
        .map_err(|e| PyRuntimeError::new_err(format!("serialization failed: {e}")))?;
    json_to_py(py, &json)
}

fn payload_map(payload: Option<&Bound<'_, PyAny>>) -> PyResult<IndexMap<String, Value>> {
    let Some(payload) = payload else {
        return Ok(IndexMap::new());
    };
    let dict = payload
        .cast::<PyDict>()
        .map_err(|_| PyTypeError::new_err("payload must be a dict"))?;
    let mut map = IndexMap::new();
    for (key, item) in dict.iter() {
        map.insert(key.extract::<String>()?, py_to_json(&item)?);
    }
    Ok(map)
}

// ------------------------------------------------------------- spec loading

/// Builtin name, file path, or document text.
fn load_workcell_arg(arg: &str) -> PyResult<WorkcellSpec> {
    match arg {
        "rpl" => Ok(modcell::fixtures::rpl_workcell()),
        "bio" => Ok(modcell::fixtures::bio_workcell()),
        other => {
            let text = if Path::new(other).is_file() {
                std::fs::read_to_string(other)
                    .map_err(|e| PyValueError::new_err(format!("cannot read `{other}`: {e}")))?
            } else {
                other.to_string()
            };
            parse_workcell(&text).map_err(|e| PyValueError::new_err(format!("workcell: {e}")))
        }
    }
}

fn load_workflow_arg(arg: &str) -> PyResult<WorkflowSpec> {
    let text = if Path::new(arg).is_file() {
        std::fs::read_to_string(arg)
            .map_err(|e| PyValueError::new_err(format!("cannot read `{arg}`: {e}")))?
    } else {
        arg.to_string()
    };
    parse_workflow(&text).map_err(|e| PyValueError::new_err(format!("workflow: {e}")))
}

// ------------------------------------------------------------------- SimLab

/// A simulated workcell plus a running executor.
#[pyclass]
struct SimLab {
    cell: SimWorkcell,
    executor: Executor,
}

#[pymethods]
impl SimLab {
    /// Build the lab. `workcell` is `"rpl"`, `"bio"`, a YAML path, or YAML
    /// text; `adapter` optionally forces `rest`/`tcp`/`loopback` everywhere.
    #[new]
    #[pyo3(signature = (workcell="rpl", seed=0, time_scale=0.0, adapter=None, log_path=None))]
    fn new(
        workcell: &str,
        seed: u64,
        time_scale: f64,
        adapter: Option<&str>,
        log_path: Option<PathBuf>,
    ) -> PyResult<SimLab> {
        let spec = load_workcell_arg(workcell)?;
        let adapter_override = match adapter {
            None => None,
            Some("rest") => Some(modcell::AdapterKind::Rest),
            Some("tcp") => Some(modcell::AdapterKind::Tcp),
            Some("loopback") => Some(modcell::AdapterKind::Loopback),
            Some(other) => {
                return Err(PyValueError::new_err(format!(
                    "unknown adapter `{other}` (rest|tcp|loopback)"
                )))
            }
        };
        let cell = SimWorkcell::build(
            &spec,
            &SimOptions {
                seed,
                time_scale,
                adapter_override,
            },
        )
        .map_err(|e| PyValueError::new_err(format!("cannot build workcell: {e}")))?;
        let log = match log_path {
            Some(path) => Arc::new(
                EventLog::open(&path)
                    .map_err(|e| PyValueError::new_err(format!("event log: {e}")))?,
            ),
            None => Arc::new(EventLog::in_memory()),
        };
        let executor = Executor::for_sim(&cell, log, ExecutorOptions::default())
            .map_err(|e| PyRuntimeError::new_err(format!("cannot start executor: {e}")))?;
        Ok(SimLab { cell, executor })
    }

    /// Names of the hosted modules.
    fn module_names(&self) -> Vec<String> {
        self.cell.module_names()
    }

    /// Liveness per module (a state query over each module's adapter).
    fn ping<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.executor.ping_all())
    }

    /// A module's self-description (name, model, actions, resources).
    fn about<'py>(&self, py: Python<'py>, module: &str) -> PyResult<Bound<'py, PyAny>> {
        let client = self
            .cell
            .client(module)
            .ok_or_else(|| PyValueError::new_err(format!("no module `{module}`")))?;
        let about = py
            .detach(|| client.about())
            .map_err(|e| PyRuntimeError::new_err(format!("about failed: {e}")))?;
        to_py(py, &about)
    }

    /// Snapshot of the simulated world (stations, plates, clock).
    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.cell.snapshot())
    }

    /// Validate a workflow against this lab's workcell and live modules.
    fn validate<'py>(&self, py: Python<'py>, workflow: &str) -> PyResult<Bound<'py, PyAny>> {
        let workflow = load_workflow_arg(workflow)?;
        let report = modcell::validate(&workflow, &self.cell.spec, Some(&self.cell));
        to_py(py, &report)
    }

    /// Submit a workflow; returns the run id immediately.
    #[pyo3(signature = (workflow, payload=None, experiment_id="python"))]
    fn submit(
        &self,
        workflow: &str,
        payload: Option<&Bound<'_, PyAny>>,
        experiment_id: &str,
    ) -> PyResult<String> {
        let workflow = load_workflow_arg(workflow)?;
        let payload = payload_map(payload)?;
        match self.executor.submit_run(&workflow, payload, experiment_id) {
            Ok(run_id) => Ok(run_id),
            Err(SubmitError::ValidationFailed(report)) => {
                let codes: Vec<&str> = report.findings.iter().map(|f| f.code.as_str()).collect();
                Err(PyValueError::new_err(format!(
                    "validation failed: {}",
                    codes.join(", ")
                )))
            }
            Err(SubmitError::Io(e)) => Err(PyRuntimeError::new_err(format!("submit failed: {e}"))),
        }
    }

    /// Block until the run is terminal (or the timeout passes); returns the
    /// run record as a dict.
    #[pyo3(signature = (run_id, timeout=600.0))]
    fn wait<'py>(&self, py: Python<'py>, run_id: &str, timeout: f64) -> PyResult<Bound<'py, PyAny>> {
        let record = py
            .detach(|| self.executor.wait_run(run_id, Duration::from_secs_f64(timeout)))
            .ok_or_else(|| PyValueError::new_err(format!("no run `{run_id}`")))?;
        to_py(py, &record)
    }

    /// Submit and wait; returns the run record as a dict.
    #[pyo3(signature = (workflow, payload=None, experiment_id="python"))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        workflow: &str,
        payload: Option<&Bound<'_, PyAny>>,
        experiment_id: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let run_id = self.submit(workflow, payload, experiment_id)?;
        self.wait(py, &run_id, 600.0)
    }

    /// Request cancellation of a run.
    fn cancel(&self, run_id: &str) -> bool {
        self.executor.cancel_run(run_id)
    }

    /// All run records, newest last.
    fn runs<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.executor.list_runs(None))
    }

    /// Run the PCR application; returns its run record.
    fn pcr<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let record = py
            .detach(|| apps::pcr_run(&self.executor))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(py, &record)
    }

    /// Run the closed-loop color picker; returns the report as a dict.
    #[pyo3(signature = (total_samples=128, batch_size=8, seed=0, target=(120.0, 120.0, 120.0), publish_dir=None))]
    fn color_picker<'py>(
        &self,
        py: Python<'py>,
        total_samples: usize,
        batch_size: usize,
        seed: u64,
        target: (f64, f64, f64),
        publish_dir: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let plan = apps::ExperimentPlan::new(
            [target.0, target.1, target.2],
            total_samples,
            batch_size,
            seed,
        );
        let publish = publish_dir.unwrap_or_else(|| PathBuf::from("publish"));
        let report = py
            .detach(|| apps::color_picker_run(&self.executor, &plan, &publish))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(py, &report)
    }

    /// Run the two-part growth assay; returns the report as a dict.
    #[pyo3(signature = (incubation_hours=12.0))]
    fn growth_assay<'py>(&self, py: Python<'py>, incubation_hours: f64) -> PyResult<Bound<'py, PyAny>> {
        let names: Vec<String> = self.cell.module_names();
        let workflows = [
            modcell::fixtures::growth_workflows_rpl(),
            modcell::fixtures::growth_workflows_bio(),
        ]
        .into_iter()
        .find(|(t0, _)| t0.modules.iter().all(|m| names.contains(m)))
        .ok_or_else(|| {
            PyValueError::new_err("no bundled growth workflow matches this workcell")
        })?;
        let plan = apps::GrowthPlan {
            incubation_hours,
            ..apps::GrowthPlan::default()
        };
        let world = self.cell.world();
        let report = py
            .detach(|| apps::growth_assay_run(&self.executor, &workflows, &plan, &world))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(py, &report)
    }

    /// Stop the executor's scheduler.
    fn shutdown(&self) {
        self.executor.shutdown();
    }
}

// --------------------------------------------------------- module functions

/// Validate a workflow document against a workcell document (both may be
/// builtin names, paths, or YAML text). Returns the report as a dict.
#[pyfunction]
fn validate<'py>(py: Python<'py>, workflow: &str, workcell: &str) -> PyResult<Bound<'py, PyAny>> {
    let workflow = load_workflow_arg(workflow)?;
    let workcell = load_workcell_arg(workcell)?;
    to_py(py, &modcell::validate(&workflow, &workcell, None))
}

/// Euclidean distance between two RGB colors.
#[pyfunction]
fn color_score(measured: (f64, f64, f64), target: (f64, f64, f64)) -> f64 {
    apps::color_score(
        [measured.0, measured.1, measured.2],
        [target.0, target.1, target.2],
    )
}

/// 96-well plate well name for an index (0 -> "A1").
#[pyfunction]
fn well_name(index: usize) -> String {
    modcell::sim::well_name(index)
}

/// Index for a well name ("A1" -> 0), or None.
#[pyfunction]
fn well_index(name: &str) -> Option<usize> {
    modcell::sim::well_index(name)
}

/// Bundled fixture documents, keyed by name.
#[pyfunction]
fn fixtures<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("rpl_workcell", modcell::fixtures::RPL_WORKCELL)?;
    dict.set_item("bio_workcell", modcell::fixtures::BIO_WORKCELL)?;
    dict.set_item("pcr_workflow", modcell::fixtures::PCR_WORKFLOW)?;
    dict.set_item("growth_t0_rpl", modcell::fixtures::GROWTH_T0_RPL)?;
    dict.set_item("growth_t12_rpl", modcell::fixtures::GROWTH_T12_RPL)?;
    dict.set_item("growth_t0_bio", modcell::fixtures::GROWTH_T0_BIO)?;
    dict.set_item("growth_t12_bio", modcell::fixtures::GROWTH_T12_BIO)?;
    dict.set_item("cp_newplate", modcell::fixtures::CP_NEWPLATE)?;
    dict.set_item("cp_mixcolor", modcell::fixtures::CP_MIXCOLOR)?;
    dict.set_item("cp_trashplate", modcell::fixtures::CP_TRASHPLATE)?;
    Ok(dict)
}

#[pymodule]
fn modcell_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SimLab>()?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(color_score, m)?)?;
    m.add_function(wrap_pyfunction!(well_name, m)?)?;
    m.add_function(wrap_pyfunction!(well_index, m)?)?;
    m.add_function(wrap_pyfunction!(fixtures, m)?)?;
    Ok(())
}
