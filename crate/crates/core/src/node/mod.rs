//! Module nodes: the uniform six-operation interface of every device.
//!
//! A [`Node`] wraps a [`Device`] implementation and enforces the
//! IDLE/BUSY/ERROR lifecycle. Adapters ([`rest`], [`tcp`], [`loopback`])
//! expose a node over a transport; [`client`] provides the matching callers.
//! The same request/response schema is carried over every adapter, so a
//! device behaves identically regardless of how it is reached.

pub mod client;
pub use client::{ClientError, ModuleClient};
pub mod loopback;
pub mod rest;
pub mod tcp;
pub mod wire;

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalog::ADMIN_COMMANDS;

pub type ActionVars = IndexMap<String, Value>;

/// Lifecycle state of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeStatus {
    Idle,
    Busy,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleState {
    #[serde(rename = "state")]
    pub status: NodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
    /// Wall-clock seconds since the epoch at which this state was entered.
    pub since: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgKind {
    String,
    Number,
    Bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub kind: ArgKind,
    /// Whether the value names a workcell station.
    pub station: bool,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSignature {
    pub handle: String,
    pub args: Vec<ArgSpec>,
    /// Nominal duration in simulated seconds.
    pub duration: f64,
    /// Transfer-class actions move labware between two stations and are
    /// scheduled under occupancy constraints.
    pub transfer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AboutInfo {
    pub name: String,
    pub model: String,
    pub version: String,
    pub actions: Vec<ActionSignature>,
    pub resource_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub action_handle: String,
    #[serde(default)]
    pub action_vars: ActionVars,
    /// Optional idempotency key. A node remembers the result of each keyed
    /// invocation it has completed and answers a repeated key from that
    /// memory instead of performing the action again. Callers that may
    /// retry after losing track of an in-flight request (for example an
    /// executor restarted mid-step) use this to keep dispatch at-most-once.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invocation_id: Option<String>,
}

impl ActionRequest {
    pub fn new(handle: &str) -> ActionRequest {
        ActionRequest {
            action_handle: handle.to_string(),
            action_vars: IndexMap::new(),
            invocation_id: None,
        }
    }

    pub fn with_var(mut self, key: &str, value: impl Into<Value>) -> ActionRequest {
        self.action_vars.insert(key.to_string(), value.into());
        self
    }

    pub fn with_invocation(mut self, id: &str) -> ActionRequest {
        self.invocation_id = Some(id.to_string());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionStatus {
    Succeeded,
    Failed,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub status: ActionStatus,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<serde_json::Map<String, Value>>,
    /// Simulated seconds the action took.
    pub duration: f64,
}

impl ActionResult {
    pub fn succeeded(data: Option<serde_json::Map<String, Value>>, duration: f64) -> ActionResult {
        ActionResult {
            status: ActionStatus::Succeeded,
            detail: "ok".to_string(),
            data,
            duration,
        }
    }

    pub fn rejected(code: &str, message: impl std::fmt::Display) -> ActionResult {
        ActionResult {
            status: ActionStatus::Rejected,
            detail: format!("{code}: {message}"),
            data: None,
            duration: 0.0,
        }
    }

    pub fn failed(code: &str, message: impl std::fmt::Display, duration: f64) -> ActionResult {
        ActionResult {
            status: ActionStatus::Failed,
            detail: format!("{code}: {message}"),
            data: None,
            duration,
        }
    }

    /// Leading error code of the detail string ("UNKNOWN_ACTION", ...).
    pub fn code(&self) -> &str {
        self.detail.split(':').next().unwrap_or("").trim()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceLevel {
    pub current: f64,
    pub capacity: f64,
    pub units: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceLevels {
    pub levels: IndexMap<String, ResourceLevel>,
}

/// Fault raised by a device while performing an action.
#[derive(Debug, Clone)]
pub struct DeviceFault {
    pub code: String,
    pub message: String,
}

impl DeviceFault {
    pub fn new(code: &str, message: impl Into<String>) -> DeviceFault {
        DeviceFault {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for DeviceFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

/// A device implementation behind a node.
///
/// The node layer handles lifecycle, argument checking, and timing; the
/// device applies effects. A real driver can replace a simulated device
/// without touching any adapter code.
pub trait Device: Send {
    fn model(&self) -> String;

    fn actions(&self) -> Vec<ActionSignature> {
        crate::catalog::actions_for_model(&self.model()).unwrap_or_default()
    }

    fn resources(&self) -> ResourceLevels {
        ResourceLevels::default()
    }

    /// Apply the effect of an action. Called once per accepted action, after
    /// its simulated duration has elapsed.
    fn perform(
        &mut self,
        handle: &str,
        vars: &ActionVars,
    ) -> Result<Option<serde_json::Map<String, Value>>, DeviceFault>;

    /// Handle a module-specific admin command.
    fn admin(
        &mut self,
        command: &str,
        args: &ActionVars,
    ) -> Result<Option<serde_json::Map<String, Value>>, DeviceFault>;

    /// Simulated duration for an action, defaulting to the signature value.
    fn duration(&self, handle: &str, vars: &ActionVars) -> f64 {
        let _ = vars;
        self.actions()
            .iter()
            .find(|sig| sig.handle == handle)
            .map(|sig| sig.duration)
            .unwrap_or(0.0)
    }
}

fn wall_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_secs_f64()
}

struct Lifecycle {
    status: NodeStatus,
    error_detail: Option<String>,
    since: f64,
    /// Incremented on every claim; lets a superseded action avoid clobbering
    /// state written after a reset.
    epoch: u64,
}

/// A module node: one device plus the six-operation interface.
pub struct Node {
    name: String,
    version: String,
    actions: Vec<ActionSignature>,
    model: String,
    lifecycle: Mutex<Lifecycle>,
    device: Mutex<Box<dyn Device>>,
    cancel: AtomicBool,
    /// Real seconds slept per simulated second (0 = as fast as possible).
    time_scale: f64,
    inflight: AtomicUsize,
    max_inflight: AtomicUsize,
    actions_performed: AtomicU64,
    /// Results of recent keyed invocations, oldest first (bounded).
    completed_invocations: Mutex<IndexMap<String, ActionResult>>,
}

/// How many keyed invocation results a node remembers for deduplication.
const INVOCATION_MEMORY: usize = 256;

impl Node {
    pub fn new(name: &str, device: Box<dyn Device>, time_scale: f64) -> Arc<Node> {
        let actions = device.actions();
        let model = device.model();
        Arc::new(Node {
            name: name.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            actions,
            model,
            lifecycle: Mutex::new(Lifecycle {
                status: NodeStatus::Idle,
                error_detail: None,
                since: wall_now(),
                epoch: 0,
            }),
            device: Mutex::new(device),
            cancel: AtomicBool::new(false),
            time_scale,
            inflight: AtomicUsize::new(0),
            max_inflight: AtomicUsize::new(0),
            actions_performed: AtomicU64::new(0),
            completed_invocations: Mutex::new(IndexMap::new()),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn about(&self) -> AboutInfo {
        let resource_names = {
            let device = self.device.lock().unwrap();
            device.resources().levels.keys().cloned().collect()
        };
        AboutInfo {
            name: self.name.clone(),
            model: self.model.clone(),
            version: self.version.clone(),
            actions: self.actions.clone(),
            resource_names,
        }
    }

    pub fn state(&self) -> ModuleState {
        let lifecycle = self.lifecycle.lock().unwrap();
        ModuleState {
            status: lifecycle.status,
            error_detail: lifecycle.error_detail.clone(),
            since: lifecycle.since,
        }
    }

    pub fn resources(&self) -> ResourceLevels {
        self.device.lock().unwrap().resources()
    }

    pub fn reset(&self) -> ModuleState {
        {
            let mut lifecycle = self.lifecycle.lock().unwrap();
            if lifecycle.status == NodeStatus::Busy {
                self.cancel.store(true, Ordering::SeqCst);
            }
            lifecycle.status = NodeStatus::Idle;
            lifecycle.error_detail = None;
            lifecycle.since = wall_now();
        }
        self.state()
    }

    pub fn action(&self, request: &ActionRequest) -> ActionResult {
        let Some(signature) = self.actions.iter().find(|s| s.handle == request.action_handle)
        else {
            return ActionResult::rejected(
                "UNKNOWN_ACTION",
                format!("no action `{}` on `{}`", request.action_handle, self.name),
            );
        };
        if let Err(problem) = check_args(signature, &request.action_vars) {
            return ActionResult::rejected("BAD_ARGS", problem);
        }
        if let Some(id) = &request.invocation_id {
            let completed = self.completed_invocations.lock().unwrap();
            if let Some(result) = completed.get(id) {
                return result.clone();
            }
        }

        // Claim the node. A second concurrent request observes BUSY here and
        // is rejected without queueing.
        let epoch = {
            let mut lifecycle = self.lifecycle.lock().unwrap();
            match lifecycle.status {
                NodeStatus::Busy => {
                    return ActionResult::rejected("BUSY", format!("`{}` is executing an action", self.name))
                }
                NodeStatus::Error => {
                    return ActionResult::rejected(
                        "IN_ERROR",
                        format!(
                            "`{}` is in ERROR ({}); reset first",
                            self.name,
                            lifecycle.error_detail.as_deref().unwrap_or("unknown fault")
                        ),
                    )
                }
                NodeStatus::Idle => {
                    lifecycle.status = NodeStatus::Busy;
                    lifecycle.since = wall_now();
                    lifecycle.epoch += 1;
                    self.cancel.store(false, Ordering::SeqCst);
                }
            }
            lifecycle.epoch
        };

        let inflight = self.inflight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_inflight.fetch_max(inflight, Ordering::SeqCst);

        let duration = {
            let device = self.device.lock().unwrap();
            device.duration(&request.action_handle, &request.action_vars)
        };
        let cancelled = self.sleep_scaled(duration);

        let result = if cancelled {
            self.finish(epoch, NodeStatus::Idle, None);
            ActionResult::failed("CANCELLED", "action aborted by reset", duration)
        } else {
            let outcome = {
                let mut device = self.device.lock().unwrap();
                device.perform(&request.action_handle, &request.action_vars)
            };
            match outcome {
                Ok(data) => {
                    self.actions_performed.fetch_add(1, Ordering::SeqCst);
                    self.finish(epoch, NodeStatus::Idle, None);
                    ActionResult::succeeded(data, duration)
                }
                Err(fault) => {
                    let detail = fault.to_string();
                    self.finish(epoch, NodeStatus::Error, Some(detail));
                    ActionResult::failed("DEVICE_FAULT", fault, duration)
                }
            }
        };
        self.inflight.fetch_sub(1, Ordering::SeqCst);
        if let Some(id) = &request.invocation_id {
            let mut completed = self.completed_invocations.lock().unwrap();
            completed.insert(id.clone(), result.clone());
            while completed.len() > INVOCATION_MEMORY {
                completed.shift_remove_index(0);
            }
        }
        result
    }

    pub fn admin(&self, command: &str, args: &ActionVars) -> ActionResult {
        if !ADMIN_COMMANDS.contains(&command) {
            return ActionResult::rejected("UNKNOWN_ADMIN", format!("no admin command `{command}`"));
        }
        let outcome = {
            let mut device = self.device.lock().unwrap();
            device.admin(command, args)
        };
        match outcome {
            Ok(data) => {
                if command == "clear_fault" {
                    self.reset();
                }
                ActionResult::succeeded(data, 0.0)
            }
            Err(fault) => ActionResult::failed("DEVICE_FAULT", fault, 0.0),
        }
    }

    /// Total actions whose effects have been applied. Used by tests to verify
    /// at-most-once dispatch.
    pub fn actions_performed(&self) -> u64 {
        self.actions_performed.load(Ordering::SeqCst)
    }

    /// Largest number of simultaneously executing actions ever observed.
    pub fn max_inflight(&self) -> usize {
        self.max_inflight.load(Ordering::SeqCst)
    }

    fn finish(&self, epoch: u64, status: NodeStatus, error_detail: Option<String>) {
        let mut lifecycle = self.lifecycle.lock().unwrap();
        // A reset that ran while this action was in flight has already moved
        // the node on; a newer claim owns the lifecycle now.
        if lifecycle.epoch != epoch || lifecycle.status != NodeStatus::Busy {
            return;
        }
        lifecycle.status = status;
        lifecycle.error_detail = error_detail;
        lifecycle.since = wall_now();
    }

    /// Sleep `duration * time_scale` real seconds in small cancellable
    /// increments. Returns true if the action was cancelled.
    fn sleep_scaled(&self, duration: f64) -> bool {
        let total = Duration::from_secs_f64((duration * self.time_scale).max(0.0));
        let mut remaining = total;
        let tick = Duration::from_millis(10);
        while !remaining.is_zero() {
            if self.cancel.load(Ordering::SeqCst) {
                return true;
            }
            let step = remaining.min(tick);
            std::thread::sleep(step);
            remaining -= step;
        }
        self.cancel.load(Ordering::SeqCst)
    }
}

fn check_args(signature: &ActionSignature, vars: &ActionVars) -> Result<(), String> {
    for arg in &signature.args {
        if arg.required && !vars.contains_key(&arg.name) {
            return Err(format!("missing required arg `{}`", arg.name));
        }
    }
    for key in vars.keys() {
        if !signature.args.iter().any(|a| &a.name == key) {
            return Err(format!("unexpected arg `{key}`"));
        }
    }
    Ok(())
}
