//! Run records and their append-only persistence.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::node::ActionResult;
use crate::specs::WorkflowSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Queued,
    Running,
    Completed,
    Failed,
    Cancelled,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::Failed | RunStatus::Cancelled)
    }
}

/// Error taxonomy: how a failure was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    /// Reported by a node's structured response.
    Software,
    /// Detected by an out-of-band world/ledger audit contradicting a
    /// reported success.
    Operational,
    /// The workflow completed, but an analysis hook flagged the result.
    Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorClass {
    pub class: ErrorKind,
    pub evidence: String,
}

impl ErrorClass {
    pub fn software(evidence: impl Into<String>) -> ErrorClass {
        ErrorClass { class: ErrorKind::Software, evidence: evidence.into() }
    }

    pub fn operational(evidence: impl Into<String>) -> ErrorClass {
        ErrorClass { class: ErrorKind::Operational, evidence: evidence.into() }
    }

    pub fn experiment(evidence: impl Into<String>) -> ErrorClass {
        ErrorClass { class: ErrorKind::Experiment, evidence: evidence.into() }
    }

    pub fn class_name(&self) -> &'static str {
        match self.class {
            ErrorKind::Software => "software",
            ErrorKind::Operational => "operational",
            ErrorKind::Experiment => "experiment",
        }
    }
}

/// Outcome of one dispatched step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: String,
    pub module: String,
    pub command: String,
    pub result: ActionResult,
    /// Simulated clock bracket, when an audit source was available.
    pub start_sim: f64,
    pub end_sim: f64,
    /// Wall-clock bracket, seconds since the Unix epoch.
    pub start_wall: f64,
    pub end_wall: f64,
}

/// Full history of one workflow run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub experiment_id: String,
    pub workflow_name: String,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub payload: IndexMap<String, Value>,
    /// In flowdef order; a failed run ends with exactly one non-succeeded
    /// entry.
    pub step_results: Vec<StepResult>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorClass>,
    /// The workflow document itself, persisted so interrupted runs can
    /// resume after a restart.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workflow: Option<WorkflowSpec>,
}

impl RunRecord {
    pub fn new(
        run_id: &str,
        experiment_id: &str,
        workflow_name: &str,
        payload: IndexMap<String, Value>,
    ) -> RunRecord {
        RunRecord {
            run_id: run_id.to_string(),
            experiment_id: experiment_id.to_string(),
            workflow_name: workflow_name.to_string(),
            payload,
            step_results: Vec::new(),
            status: RunStatus::Queued,
            detail: String::new(),
            error: None,
            workflow: None,
        }
    }

    /// Commands executed, in order. Used by retargeting checks.
    pub fn command_sequence(&self) -> Vec<String> {
        self.step_results.iter().map(|s| s.command.clone()).collect()
    }
}

/// Append-only store: one full record document per state change, last
/// document per run wins on reload.
pub struct RecordStore {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

impl RecordStore {
    /// Open (or create) a store, returning the latest state of every run in
    /// first-seen order.
    pub fn open(path: &Path) -> std::io::Result<(RecordStore, Vec<RunRecord>)> {
        let mut latest: IndexMap<String, RunRecord> = IndexMap::new();
        match File::open(path) {
            Ok(file) => {
                for (index, line) in std::io::BufReader::new(file).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let record: RunRecord = serde_json::from_str(&line).map_err(|e| {
                        std::io::Error::new(
                            std::io::ErrorKind::InvalidData,
                            format!("record store line {}: {e}", index + 1),
                        )
                    })?;
                    latest.insert(record.run_id.clone(), record);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let store = RecordStore {
            path: path.to_path_buf(),
            writer: Mutex::new(BufWriter::new(file)),
        };
        Ok((store, latest.into_values().collect()))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Durably append the current state of a record.
    pub fn append(&self, record: &RunRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        let mut writer = self.writer.lock().unwrap();
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_state_per_run_wins_on_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        {
            let (store, existing) = RecordStore::open(&path).unwrap();
            assert!(existing.is_empty());
            let mut record = RunRecord::new("run-1", "exp", "wf", IndexMap::new());
            store.append(&record).unwrap();
            record.status = RunStatus::Running;
            store.append(&record).unwrap();
            record.status = RunStatus::Completed;
            store.append(&record).unwrap();
            let other = RunRecord::new("run-2", "exp", "wf", IndexMap::new());
            store.append(&other).unwrap();
        }
        let (_store, records) = RecordStore::open(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].run_id, "run-1");
        assert_eq!(records[0].status, RunStatus::Completed);
        assert_eq!(records[1].status, RunStatus::Queued);
    }
}
