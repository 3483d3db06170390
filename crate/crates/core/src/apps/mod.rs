//! Applications: control programs over the executor.
//!
//! Three are bundled: the closed-loop color picker (an evolutionary solver
//! proposing pigment mixtures, measured by the simulated camera), a PCR
//! preparation/amplification/imaging run, and a two-part growth assay with a
//! dose–response readout. Applications only talk to instruments through the
//! executor; analysis hooks may additionally flag experiment-class errors on
//! completed runs.

mod color;
mod growth;
mod solver;

pub use color::{color_picker_run, publish_hook, BatchRecord, ColorReport, ExperimentPlan, SampleRow};
pub use growth::{analyze_growth, growth_assay_run, GrowthPlan, GrowthReport};
pub use solver::{color_score, ColorSample, SolverConfig, SolverState};

use std::time::Duration;

use indexmap::IndexMap;
use serde_json::Value;
use thiserror::Error;

use crate::exec::{Executor, RunRecord, RunStatus, SubmitError};
use crate::specs::WorkflowSpec;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("run submission rejected: {0:?}")]
    Submit(SubmitError),
    #[error("run {run_id} ended {status:?}: {detail}")]
    RunFailed {
        run_id: String,
        status: RunStatus,
        detail: String,
    },
    #[error("run {1} produced no usable data: {0}")]
    MissingData(String, String),
    #[error("plan invalid: {0}")]
    BadPlan(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<SubmitError> for AppError {
    fn from(error: SubmitError) -> AppError {
        AppError::Submit(error)
    }
}

/// Submit a workflow and wait for a terminal record, failing unless it
/// completed. Applications are single control loops, so a blocking helper
/// covers them.
pub(crate) fn run_to_completion(
    executor: &Executor,
    workflow: &WorkflowSpec,
    payload: IndexMap<String, Value>,
    experiment_id: &str,
) -> Result<RunRecord, AppError> {
    let run_id = executor.submit_run(workflow, payload, experiment_id)?;
    let record = executor
        .wait_run(&run_id, Duration::from_secs(600))
        .expect("submitted run exists");
    if record.status != RunStatus::Completed {
        return Err(AppError::RunFailed {
            run_id,
            status: record.status,
            detail: record.detail,
        });
    }
    Ok(record)
}

/// Find the data map of the first step result invoking `command`.
pub(crate) fn step_data<'a>(
    record: &'a RunRecord,
    command: &str,
) -> Result<&'a serde_json::Map<String, Value>, AppError> {
    record
        .step_results
        .iter()
        .find(|s| s.command == command)
        .and_then(|s| s.result.data.as_ref())
        .ok_or_else(|| {
            AppError::MissingData(
                format!("no data from step `{command}`"),
                record.run_id.clone(),
            )
        })
}

/// Run the bundled PCR workflow to completion: plate retrieval, master-mix
/// preparation, sealing, thermocycling, peeling, imaging, and delivery to
/// the exchange station.
pub fn pcr_run(executor: &Executor) -> Result<RunRecord, AppError> {
    let workflow = crate::fixtures::pcr_workflow();
    run_to_completion(executor, &workflow, IndexMap::new(), "pcr")
}
