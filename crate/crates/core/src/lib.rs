//! Modular self-driving-laboratory orchestration at desk scale.
//!
//! The crate is organized around a small set of concepts:
//!
//! - [`specs`]: declarative workcell and workflow documents, with parsing
//!   and cross-validation.
//! - [`node`]: the uniform six-operation module interface (`about`, `action`,
//!   `reset`, `resources`, `state`, `admin`) served over REST, framed TCP,
//!   or an in-process loopback adapter.
//! - [`sim`]: simulated instruments sharing a world model of plates,
//!   stations, and liquids, so workflows have observable effects.
//! - [`exec`]: the workflow executor: run submission, occupancy-aware step
//!   scheduling, run records, and error classification.
//! - [`events`]: an append-only event log with file persistence, replay,
//!   and subscribable sinks.
//! - [`apps`]: the color-picker, PCR, and growth-assay applications.

pub mod apps;
pub mod catalog;
pub mod events;
pub mod exec;
pub mod fixtures;
pub mod node;
pub mod sim;
pub mod specs;

pub use node::{
    AboutInfo, ActionRequest, ActionResult, ActionSignature, ActionStatus, ModuleState, Node,
    NodeStatus, ResourceLevels,
};
pub use specs::{
    parse_workcell, parse_workflow, validate, AdapterKind, Finding, ModuleSpec, Severity, SpecError,
    StationSpec, StepSpec, ValidationReport, WorkcellSpec, WorkflowSpec,
};
