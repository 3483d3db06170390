//! Reading an event log back and reconstructing run histories.
//!
//! Replay doubles as a consistency oracle: a well-formed log has sequence
//! numbers 1, 2, 3, ... with no gaps or duplicates, and each completed run's
//! events form the pattern `workflow_start (step_start step_end)*
//! workflow_end`.

use std::io::BufRead;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Event, EventKind};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("event log io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed event: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: sequence gap: expected {expected}, found {found}")]
    Gap {
        line: usize,
        expected: u64,
        found: u64,
    },
}

/// Read and verify a JSONL event log.
pub fn read_events(path: &Path) -> Result<Vec<Event>, ReplayError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut events = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line).map_err(|e| ReplayError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let expected = events.last().map(|e: &Event| e.seq + 1).unwrap_or(1);
        if event.seq != expected {
            return Err(ReplayError::Gap {
                line: line_no,
                expected,
                found: event.seq,
            });
        }
        events.push(event);
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub workflow: String,
    /// (step name, final status) in execution order.
    pub steps: Vec<(String, String)>,
    /// `running` means the log ends before a `workflow_end` was written;
    /// otherwise whatever status `workflow_end` carried.
    pub status: String,
    pub detail: String,
    /// Error classes attached to this run (`software`, `operational`, ...).
    pub error_classes: Vec<String>,
    /// True if the events obey `workflow_start (step_start step_end)*
    /// workflow_end` with matching step names.
    pub well_formed: bool,
}

/// Rebuild per-run histories from an event stream.
pub fn reconstruct_runs(events: &[Event]) -> IndexMap<String, RunSummary> {
    let mut runs: IndexMap<String, RunSummary> = IndexMap::new();
    // Step currently open (started, not ended) per run.
    let mut open_step: IndexMap<String, Option<String>> = IndexMap::new();
    for event in events {
        let Some(run_id) = event.run_id.as_deref() else {
            continue;
        };
        match event.kind {
            EventKind::WorkflowStart => {
                runs.insert(
                    run_id.to_string(),
                    RunSummary {
                        run_id: run_id.to_string(),
                        workflow: event.attr_str("workflow").unwrap_or_default().to_string(),
                        steps: Vec::new(),
                        status: "running".to_string(),
                        detail: String::new(),
                        error_classes: Vec::new(),
                        well_formed: true,
                    },
                );
                open_step.insert(run_id.to_string(), None);
            }
            EventKind::StepStart => {
                let Some(run) = runs.get_mut(run_id) else { continue };
                let slot = open_step.entry(run_id.to_string()).or_insert(None);
                if slot.is_some() || run.status != "running" {
                    run.well_formed = false;
                }
                *slot = Some(event.attr_str("step").unwrap_or_default().to_string());
            }
            EventKind::StepEnd => {
                let Some(run) = runs.get_mut(run_id) else { continue };
                let step = event.attr_str("step").unwrap_or_default().to_string();
                let status = event.attr_str("status").unwrap_or_default().to_string();
                match open_step.entry(run_id.to_string()).or_insert(None).take() {
                    Some(open) if open == step => {}
                    _ => run.well_formed = false,
                }
                run.steps.push((step, status));
            }
            EventKind::WorkflowEnd => {
                let Some(run) = runs.get_mut(run_id) else { continue };
                if run.status != "running"
                    || open_step.get(run_id).map(|s| s.is_some()).unwrap_or(false)
                {
                    run.well_formed = false;
                }
                run.status = event.attr_str("status").unwrap_or("completed").to_string();
                run.detail = event.attr_str("detail").unwrap_or_default().to_string();
            }
            EventKind::ErrorClassified => {
                if let Some(run) = runs.get_mut(run_id) {
                    run.error_classes
                        .push(event.attr_str("class").unwrap_or_default().to_string());
                }
            }
            _ => {}
        }
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Draft, EventLog};

    #[test]
    fn detects_sequence_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"seq":1,"wall_time":0.0,"kind":"note"}"#,
                "\n",
                r#"{"seq":3,"wall_time":0.0,"kind":"note"}"#,
                "\n",
            ),
        )
        .unwrap();
        match read_events(&path) {
            Err(ReplayError::Gap { expected: 2, found: 3, .. }) => {}
            other => panic!("expected gap error, got {other:?}"),
        }
    }

    #[test]
    fn reconstructs_run_histories() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        {
            let log = EventLog::open(&path).unwrap();
            log.emit(Draft::new(EventKind::WorkflowStart).run("run-1").attr("workflow", "wf"));
            log.emit(Draft::new(EventKind::StepStart).run("run-1").attr("step", "s1"));
            log.emit(
                Draft::new(EventKind::StepEnd)
                    .run("run-1")
                    .attr("step", "s1")
                    .attr("status", "succeeded"),
            );
            log.emit(Draft::new(EventKind::WorkflowEnd).run("run-1").attr("status", "completed"));
        }
        let events = read_events(&path).unwrap();
        let runs = reconstruct_runs(&events);
        let run = &runs["run-1"];
        assert_eq!(run.status, "completed");
        assert_eq!(run.workflow, "wf");
        assert_eq!(run.steps, vec![("s1".to_string(), "succeeded".to_string())]);
        assert!(run.well_formed);
    }

    #[test]
    fn flags_malformed_step_nesting() {
        let log = EventLog::in_memory();
        let receiver = log.subscribe(16);
        log.emit(Draft::new(EventKind::WorkflowStart).run("r").attr("workflow", "wf"));
        log.emit(Draft::new(EventKind::StepEnd).run("r").attr("step", "s1").attr("status", "x"));
        log.emit(Draft::new(EventKind::WorkflowEnd).run("r").attr("status", "completed"));
        drop(log);
        let events: Vec<Event> = receiver.iter().collect();
        let runs = reconstruct_runs(&events);
        assert!(!runs["r"].well_formed);
    }
}
