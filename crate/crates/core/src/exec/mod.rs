//! The workflow executor: run submission, occupancy-aware scheduling,
//! run records, and error classification.
//!
//! One scheduler thread plans dispatches; each dispatched step runs on its
//! own worker thread, which calls the module node through its client and
//! reports the outcome back. All queue and ledger mutations happen under the
//! scheduler lock. Two constraints gate dispatch: a step runs only after the
//! preceding step of the same run succeeded, and a transfer-class step runs
//! only when its source station is occupied and its target station empty,
//! with both stations reserved atomically for the duration of the action.

mod records;

pub use records::{ErrorClass, ErrorKind, RecordStore, RunRecord, RunStatus, StepResult};

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde_json::Value;
use thiserror::Error;

use crate::catalog::actions_for_model;
use crate::events::{Draft, EventKind, EventLog};
use crate::node::{ActionRequest, ActionResult, ModuleClient};
use crate::sim::SharedWorld;
use crate::specs::{validate, ValidationReport, WorkcellSpec, WorkflowSpec};

/// Out-of-band view of the physical world used to audit reported outcomes.
pub trait Audit: Send + Sync {
    fn station_occupied(&self, station: &str) -> Option<bool>;
    /// Stations that destroy deposited labware; a transfer into one leaves
    /// the target legitimately empty.
    fn is_trash(&self, station: &str) -> bool;
    fn clock(&self) -> f64;
}

/// Audit backed by the simulated world model.
pub struct WorldAudit(pub SharedWorld);

impl Audit for WorldAudit {
    fn station_occupied(&self, station: &str) -> Option<bool> {
        self.0.lock().unwrap().station_occupied(station)
    }

    fn is_trash(&self, station: &str) -> bool {
        self.0.lock().unwrap().trash_stations.contains(station)
    }

    fn clock(&self) -> f64 {
        self.0.lock().unwrap().clock
    }
}

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error("workflow failed validation")]
    ValidationFailed(ValidationReport),
    #[error("record persistence error: {0}")]
    Io(#[from] std::io::Error),
}

/// Occupancy and reservation ledger over the workcell's named stations.
#[derive(Debug, Default)]
pub struct StationLedger {
    stations: IndexMap<String, StationState>,
}

#[derive(Debug, Clone, Default)]
struct StationState {
    occupied: bool,
    reserved_by: Option<String>,
}

impl StationLedger {
    pub fn with_stations<'a>(names: impl Iterator<Item = &'a str>) -> StationLedger {
        StationLedger {
            stations: names
                .map(|n| (n.to_string(), StationState::default()))
                .collect(),
        }
    }

    /// Refresh occupancy from the audit source, keeping reservations.
    pub fn sync_from(&mut self, audit: &dyn Audit) {
        for (name, state) in self.stations.iter_mut() {
            if let Some(occupied) = audit.station_occupied(name) {
                state.occupied = occupied;
            }
        }
    }

    pub fn occupied(&self, station: &str) -> Option<bool> {
        self.stations.get(station).map(|s| s.occupied)
    }

    /// A transfer is grantable iff the source holds a plate, the target does
    /// not, and neither station is reserved by another run.
    pub fn can_transfer(&self, source: &str, target: &str) -> bool {
        let Some(src) = self.stations.get(source) else { return false };
        let Some(dst) = self.stations.get(target) else { return false };
        src.occupied && !dst.occupied && src.reserved_by.is_none() && dst.reserved_by.is_none()
    }

    /// Reserve both stations atomically (under the caller's lock), in
    /// station-name order so symmetric transfers cannot deadlock.
    pub fn reserve_pair(&mut self, source: &str, target: &str, run_id: &str) -> bool {
        if !self.can_transfer(source, target) {
            return false;
        }
        let mut pair = [source, target];
        pair.sort_unstable();
        for station in pair {
            self.stations[station].reserved_by = Some(run_id.to_string());
        }
        true
    }

    /// Release every reservation held by a run.
    pub fn release(&mut self, run_id: &str) {
        for state in self.stations.values_mut() {
            if state.reserved_by.as_deref() == Some(run_id) {
                state.reserved_by = None;
            }
        }
    }

    /// Apply the nominal effect of a successful transfer (used when no audit
    /// source is available).
    pub fn apply_transfer(&mut self, source: &str, target: &str) {
        if let Some(state) = self.stations.get_mut(source) {
            state.occupied = false;
        }
        if let Some(state) = self.stations.get_mut(target) {
            state.occupied = true;
        }
    }
}

/// Classify a step outcome per the error taxonomy. `audit_contradiction`
/// carries evidence that the world disagrees with a reported success.
pub fn classify_error(
    result: &ActionResult,
    audit_contradiction: Option<&str>,
) -> Option<ErrorClass> {
    if result.status != crate::node::ActionStatus::Succeeded {
        return Some(ErrorClass::software(result.detail.clone()));
    }
    audit_contradiction.map(ErrorClass::operational)
}

#[derive(Debug, Clone)]
pub struct ExecutorOptions {
    /// How long all runs may sit blocked with nothing in flight before the
    /// oldest blocked run is failed with an operational STALL error.
    pub stall_window: Duration,
    /// JSONL run-record store; enables crash recovery.
    pub store_path: Option<PathBuf>,
}

impl Default for ExecutorOptions {
    fn default() -> ExecutorOptions {
        ExecutorOptions {
            stall_window: Duration::from_secs(2),
            store_path: None,
        }
    }
}

struct RunInner {
    record: RunRecord,
    workflow: WorkflowSpec,
    next_step: usize,
    inflight: bool,
    cancel_requested: bool,
    submitted_at: Instant,
}

struct SchedState {
    runs: IndexMap<String, RunInner>,
    ledger: StationLedger,
    busy_modules: HashSet<String>,
    run_counter: u64,
    last_progress: Instant,
}

struct Inner {
    workcell: WorkcellSpec,
    clients: IndexMap<String, Arc<ModuleClient>>,
    audit: Option<Box<dyn Audit>>,
    log: Arc<EventLog>,
    store: Option<RecordStore>,
    stall_window: Duration,
    state: Mutex<SchedState>,
    wake: Condvar,
    shutdown: AtomicBool,
}

/// Handle to a running executor. Cloneable; dropping the last handle stops
/// the scheduler.
#[derive(Clone)]
pub struct Executor {
    inner: Arc<Inner>,
}

struct Dispatch {
    run_id: String,
    step_name: String,
    module: String,
    command: String,
    request: ActionRequest,
    client: Arc<ModuleClient>,
    transfer: Option<(String, String)>,
    start_sim: f64,
    start_wall: f64,
}

fn wall_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_secs_f64()
}

impl Executor {
    pub fn new(
        workcell: WorkcellSpec,
        clients: IndexMap<String, Arc<ModuleClient>>,
        audit: Option<Box<dyn Audit>>,
        log: Arc<EventLog>,
        options: ExecutorOptions,
    ) -> std::io::Result<Executor> {
        let mut ledger = StationLedger::with_stations(workcell.locations.keys().map(String::as_str));
        if let Some(audit) = audit.as_deref() {
            ledger.sync_from(audit);
        }
        let mut runs: IndexMap<String, RunInner> = IndexMap::new();
        let mut run_counter = 0;
        let store = match &options.store_path {
            Some(path) => {
                let (store, persisted) = RecordStore::open(path)?;
                for record in persisted {
                    if let Some(suffix) = record.run_id.strip_prefix("run-") {
                        if let Ok(n) = suffix.parse::<u64>() {
                            run_counter = run_counter.max(n);
                        }
                    }
                    // Interrupted runs resume where their durable step
                    // results end; completed steps are never re-dispatched.
                    if !record.status.is_terminal() {
                        if let Some(workflow) = record.workflow.clone() {
                            let next_step = record.step_results.len();
                            runs.insert(
                                record.run_id.clone(),
                                RunInner {
                                    record,
                                    workflow,
                                    next_step,
                                    inflight: false,
                                    cancel_requested: false,
                                    submitted_at: Instant::now(),
                                },
                            );
                        }
                    }
                }
                Some(store)
            }
            None => None,
        };

        let inner = Arc::new(Inner {
            workcell,
            clients,
            audit,
            log,
            store,
            stall_window: options.stall_window,
            state: Mutex::new(SchedState {
                runs,
                ledger,
                busy_modules: HashSet::new(),
                run_counter,
                last_progress: Instant::now(),
            }),
            wake: Condvar::new(),
            shutdown: AtomicBool::new(false),
        });
        let scheduler = Arc::downgrade(&inner);
        std::thread::spawn(move || {
            while let Some(inner) = scheduler.upgrade() {
                if inner.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                inner.scheduler_pass();
                let guard = inner.state.lock().unwrap();
                let _ = inner
                    .wake
                    .wait_timeout(guard, Duration::from_millis(20))
                    .unwrap();
            }
        });
        Ok(Executor { inner })
    }

    /// Convenience constructor wiring a simulated workcell's clients and
    /// world audit.
    pub fn for_sim(
        cell: &crate::sim::SimWorkcell,
        log: Arc<EventLog>,
        options: ExecutorOptions,
    ) -> std::io::Result<Executor> {
        Executor::new(
            cell.spec.clone(),
            cell.clients().clone(),
            Some(Box::new(WorldAudit(cell.world()))),
            log,
            options,
        )
    }

    /// Validate and enqueue a run. Payload placeholders of the form
    /// `payload.<key>` in step args resolve at dispatch time.
    pub fn submit_run(
        &self,
        workflow: &WorkflowSpec,
        payload: IndexMap<String, Value>,
        experiment_id: &str,
    ) -> Result<String, SubmitError> {
        let report = validate(workflow, &self.inner.workcell, None);
        if !report.ok {
            return Err(SubmitError::ValidationFailed(report));
        }
        let run_id = {
            let mut state = self.inner.state.lock().unwrap();
            state.run_counter += 1;
            let run_id = format!("run-{:04}", state.run_counter);
            let mut record = RunRecord::new(&run_id, experiment_id, &workflow.name, payload);
            record.workflow = Some(workflow.clone());
            if let Some(store) = &self.inner.store {
                store.append(&record)?;
            }
            self.inner.log.emit(
                Draft::new(EventKind::WorkflowStart)
                    .experiment(experiment_id)
                    .run(&run_id)
                    .attr("workflow", workflow.name.as_str()),
            );
            state.runs.insert(
                run_id.clone(),
                RunInner {
                    record,
                    workflow: workflow.clone(),
                    next_step: 0,
                    inflight: false,
                    cancel_requested: false,
                    submitted_at: Instant::now(),
                },
            );
            state.last_progress = Instant::now();
            run_id
        };
        self.inner.wake.notify_all();
        Ok(run_id)
    }

    pub fn get_run(&self, run_id: &str) -> Option<RunRecord> {
        self.inner
            .state
            .lock()
            .unwrap()
            .runs
            .get(run_id)
            .map(|r| r.record.clone())
    }

    pub fn list_runs(&self, status: Option<RunStatus>) -> Vec<RunRecord> {
        self.inner
            .state
            .lock()
            .unwrap()
            .runs
            .values()
            .filter(|r| status.map(|s| r.record.status == s).unwrap_or(true))
            .map(|r| r.record.clone())
            .collect()
    }

    /// Request cancellation: the run is aborted before its next dispatch; an
    /// in-flight action is awaited and its result discarded.
    pub fn cancel_run(&self, run_id: &str) -> bool {
        let mut state = self.inner.state.lock().unwrap();
        let Some(run) = state.runs.get_mut(run_id) else { return false };
        if run.record.status.is_terminal() {
            return false;
        }
        run.cancel_requested = true;
        drop(state);
        self.inner.wake.notify_all();
        true
    }

    /// Block until the run reaches a terminal status or the timeout passes.
    pub fn wait_run(&self, run_id: &str, timeout: Duration) -> Option<RunRecord> {
        let deadline = Instant::now() + timeout;
        let mut state = self.inner.state.lock().unwrap();
        loop {
            match state.runs.get(run_id) {
                None => return None,
                Some(run) if run.record.status.is_terminal() => {
                    return Some(run.record.clone());
                }
                Some(_) => {}
            }
            let now = Instant::now();
            if now >= deadline {
                return state.runs.get(run_id).map(|r| r.record.clone());
            }
            let (guard, _) = self
                .inner
                .wake
                .wait_timeout(state, deadline - now)
                .unwrap();
            state = guard;
        }
    }

    /// Ping every module client; true means the node answered a state query.
    pub fn ping_all(&self) -> IndexMap<String, bool> {
        self.inner
            .clients
            .iter()
            .map(|(name, client)| (name.clone(), client.ping()))
            .collect()
    }

    /// Attach an experiment-class error to a completed run (analysis hook).
    pub fn flag_experiment_error(&self, run_id: &str, evidence: &str) -> bool {
        let mut state = self.inner.state.lock().unwrap();
        let Some(run) = state.runs.get_mut(run_id) else { return false };
        if run.record.error.is_some() {
            return false;
        }
        run.record.error = Some(ErrorClass::experiment(evidence));
        let record = run.record.clone();
        if let Some(store) = &self.inner.store {
            let _ = store.append(&record);
        }
        self.inner.log.emit(
            Draft::new(EventKind::ErrorClassified)
                .experiment(&record.experiment_id)
                .run(run_id)
                .attr("class", "experiment")
                .attr("evidence", evidence),
        );
        true
    }

    pub fn workcell(&self) -> &WorkcellSpec {
        &self.inner.workcell
    }

    pub fn log(&self) -> Arc<EventLog> {
        Arc::clone(&self.inner.log)
    }

    pub fn shutdown(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        self.inner.wake.notify_all();
    }
}

impl Inner {
    fn sim_clock(&self) -> f64 {
        self.audit.as_deref().map(|a| a.clock()).unwrap_or(0.0)
    }

    fn persist(&self, record: &RunRecord) {
        if let Some(store) = &self.store {
            store.append(record).expect("run record write");
        }
    }

    fn scheduler_pass(self: &Arc<Self>) {
        let dispatches = {
            let mut state = self.state.lock().unwrap();
            let dispatches = self.plan(&mut state);
            if dispatches.is_empty() {
                self.check_stall(&mut state);
            } else {
                state.last_progress = Instant::now();
            }
            dispatches
        };
        for dispatch in dispatches {
            let inner = Arc::clone(self);
            std::thread::spawn(move || {
                let result = dispatch.client.action(&dispatch.request).unwrap_or_else(|e| {
                    ActionResult::failed("TRANSPORT", e, 0.0)
                });
                inner.complete_step(&dispatch, result);
            });
        }
    }

    /// Select every step that is dispatchable right now, reserving stations
    /// and modules before releasing the lock.
    fn plan(&self, state: &mut SchedState) -> Vec<Dispatch> {
        let mut dispatches = Vec::new();
        let run_ids: Vec<String> = state.runs.keys().cloned().collect();
        for run_id in run_ids {
            let run = &state.runs[&run_id];
            if run.record.status.is_terminal() || run.inflight {
                continue;
            }
            if run.cancel_requested {
                self.finalize(state, &run_id, RunStatus::Cancelled, "cancelled by request", None);
                continue;
            }
            if run.next_step >= run.workflow.flowdef.len() {
                self.finalize(state, &run_id, RunStatus::Completed, "", None);
                continue;
            }
            let step = run.workflow.flowdef[run.next_step].clone();
            let run_next_step = run.next_step;
            let payload = run.record.payload.clone();
            let args = match substitute_payload(&step.args, &payload) {
                Ok(args) => args,
                Err(key) => {
                    let evidence = format!("UNKNOWN_PAYLOAD_KEY: step `{}` references `payload.{key}`", step.name);
                    self.finalize(
                        state,
                        &run_id,
                        RunStatus::Failed,
                        &evidence.clone(),
                        Some(ErrorClass::software(evidence)),
                    );
                    continue;
                }
            };
            if state.busy_modules.contains(&step.module) {
                continue;
            }
            let transfer = self.transfer_stations(&step.module, &step.command, &args);
            if let Some((source, target)) = &transfer {
                if !state.ledger.reserve_pair(source, target, &run_id) {
                    continue; // blocked on occupancy; retry next pass
                }
            }
            state.busy_modules.insert(step.module.clone());
            let run = &mut state.runs[&run_id];
            run.inflight = true;
            if run.record.status == RunStatus::Queued {
                run.record.status = RunStatus::Running;
                self.persist(&run.record);
            }
            let Some(client) = self.clients.get(&step.module).map(Arc::clone) else {
                // No client for the module: fail fast as a software error.
                state.busy_modules.remove(&step.module);
                state.ledger.release(&run_id);
                state.runs[&run_id].inflight = false;
                let evidence = format!("NO_CLIENT: module `{}` has no client", step.module);
                self.finalize(
                    state,
                    &run_id,
                    RunStatus::Failed,
                    &evidence.clone(),
                    Some(ErrorClass::software(evidence)),
                );
                continue;
            };
            self.log.emit(
                Draft::new(EventKind::StepStart)
                    .experiment(&state.runs[&run_id].record.experiment_id)
                    .run(&run_id)
                    .attr("step", step.name.as_str())
                    .attr("module", step.module.as_str())
                    .attr("command", step.command.as_str()),
            );
            dispatches.push(Dispatch {
                run_id: run_id.clone(),
                step_name: step.name.clone(),
                module: step.module.clone(),
                command: step.command.clone(),
                request: ActionRequest {
                    action_handle: step.command.clone(),
                    action_vars: args,
                    // Deterministic per (run, step index): a restarted
                    // executor re-issuing this step after a crash gets the
                    // remembered result instead of a second execution.
                    invocation_id: Some(format!("{run_id}:{}", run_next_step)),
                },
                client,
                transfer,
                start_sim: self.sim_clock(),
                start_wall: wall_now(),
            });
        }
        dispatches
    }

    /// Transfer-class steps are identified by catalog metadata for the
    /// module's model (falling back to the literal command name `transfer`).
    fn transfer_stations(
        &self,
        module: &str,
        command: &str,
        args: &IndexMap<String, Value>,
    ) -> Option<(String, String)> {
        let is_transfer = self
            .workcell
            .module(module)
            .and_then(|m| actions_for_model(&m.model))
            .and_then(|sigs| sigs.iter().find(|s| s.handle == command).map(|s| s.transfer))
            .unwrap_or(command == "transfer");
        if !is_transfer {
            return None;
        }
        let source = args.get("source")?.as_str()?.to_string();
        let target = args.get("target")?.as_str()?.to_string();
        Some((source, target))
    }

    fn complete_step(&self, dispatch: &Dispatch, result: ActionResult) {
        if self.shutdown.load(Ordering::SeqCst) {
            // A shut-down executor abandons in-flight results rather than
            // writing to a store a successor may already own. The node's
            // invocation memory lets the successor recover the outcome.
            return;
        }
        let mut state = self.state.lock().unwrap();
        state.busy_modules.remove(&dispatch.module);
        state.ledger.release(&dispatch.run_id);
        // Keep the ledger honest: prefer the audited world over bookkeeping.
        match self.audit.as_deref() {
            Some(audit) => state.ledger.sync_from(audit),
            None => {
                if let (Some((source, target)), true) =
                    (&dispatch.transfer, result.status == crate::node::ActionStatus::Succeeded)
                {
                    state.ledger.apply_transfer(source, target);
                }
            }
        }
        state.last_progress = Instant::now();

        let run = match state.runs.get_mut(&dispatch.run_id) {
            Some(run) => run,
            None => return,
        };
        run.inflight = false;
        if run.cancel_requested {
            // Awaited, now discarded.
            self.finalize(&mut state, &dispatch.run_id, RunStatus::Cancelled, "cancelled by request", None);
            self.wake.notify_all();
            return;
        }

        if result.status == crate::node::ActionStatus::Rejected && result.code() == "BUSY" {
            // The node is still executing an earlier action (for example one
            // orphaned by a crashed executor). Nothing was performed, so the
            // step stays pending and is re-dispatched on a later pass.
            self.log.emit(
                Draft::new(EventKind::StepEnd)
                    .experiment(&run.record.experiment_id)
                    .run(&dispatch.run_id)
                    .attr("step", dispatch.step_name.as_str())
                    .attr("module", dispatch.module.as_str())
                    .attr("command", dispatch.command.as_str())
                    .attr("status", "rejected")
                    .attr("detail", result.detail.as_str()),
            );
            self.wake.notify_all();
            return;
        }

        let end_sim = self.sim_clock();
        let end_wall = wall_now();
        let step_result = StepResult {
            step: dispatch.step_name.clone(),
            module: dispatch.module.clone(),
            command: dispatch.command.clone(),
            result: result.clone(),
            start_sim: dispatch.start_sim,
            end_sim,
            start_wall: dispatch.start_wall,
            end_wall,
        };
        let status_name = format!("{:?}", result.status).to_lowercase();
        run.record.step_results.push(step_result);
        self.log.emit(
            Draft::new(EventKind::StepEnd)
                .experiment(&run.record.experiment_id)
                .run(&dispatch.run_id)
                .attr("step", dispatch.step_name.as_str())
                .attr("module", dispatch.module.as_str())
                .attr("command", dispatch.command.as_str())
                .attr("status", status_name.as_str())
                .attr("detail", result.detail.as_str()),
        );

        let contradiction = match (&dispatch.transfer, result.status) {
            (Some((source, target)), crate::node::ActionStatus::Succeeded) => {
                self.audit_transfer(source, target)
            }
            _ => None,
        };
        match classify_error(&result, contradiction.as_deref()) {
            Some(error) => {
                let detail = error.evidence.clone();
                let error_clone = error.clone();
                self.finalize(&mut state, &dispatch.run_id, RunStatus::Failed, &detail, Some(error_clone));
            }
            None => {
                let run = state.runs.get_mut(&dispatch.run_id).unwrap();
                run.next_step += 1;
                if run.next_step >= run.workflow.flowdef.len() {
                    self.finalize(&mut state, &dispatch.run_id, RunStatus::Completed, "", None);
                } else {
                    self.persist(&state.runs[&dispatch.run_id].record);
                }
            }
        }
        self.wake.notify_all();
    }

    /// Evidence that the world contradicts a reported transfer success.
    fn audit_transfer(&self, source: &str, target: &str) -> Option<String> {
        let audit = self.audit.as_deref()?;
        if audit.station_occupied(source) == Some(true) {
            return Some(format!(
                "audit: plate still present at source `{source}` after reported transfer success"
            ));
        }
        if !audit.is_trash(target) && audit.station_occupied(target) == Some(false) {
            return Some(format!(
                "audit: plate absent from target `{target}` after reported transfer success"
            ));
        }
        None
    }

    fn finalize(
        &self,
        state: &mut SchedState,
        run_id: &str,
        status: RunStatus,
        detail: &str,
        error: Option<ErrorClass>,
    ) {
        state.ledger.release(run_id);
        let run = match state.runs.get_mut(run_id) {
            Some(run) => run,
            None => return,
        };
        run.inflight = false;
        run.record.status = status;
        run.record.detail = detail.to_string();
        if let Some(error) = &error {
            run.record.error = Some(error.clone());
        }
        let record = run.record.clone();
        self.persist(&record);
        if let Some(error) = &error {
            self.log.emit(
                Draft::new(EventKind::ErrorClassified)
                    .experiment(&record.experiment_id)
                    .run(run_id)
                    .attr("class", error.class_name())
                    .attr("evidence", error.evidence.as_str()),
            );
        }
        let status_name = format!("{status:?}").to_lowercase();
        self.log.emit(
            Draft::new(EventKind::WorkflowEnd)
                .experiment(&record.experiment_id)
                .run(run_id)
                .attr("status", status_name.as_str())
                .attr("detail", detail),
        );
        state.last_progress = Instant::now();
        self.wake.notify_all();
    }

    /// If every active run has been blocked for longer than the stall
    /// window with nothing in flight, fail the oldest as OPERATIONAL/STALL.
    fn check_stall(&self, state: &mut SchedState) {
        let any_inflight = state.runs.values().any(|r| r.inflight);
        let blocked: Vec<(String, Instant)> = state
            .runs
            .values()
            .filter(|r| !r.record.status.is_terminal())
            .map(|r| (r.record.run_id.clone(), r.submitted_at))
            .collect();
        if any_inflight || blocked.is_empty() {
            return;
        }
        if state.last_progress.elapsed() < self.stall_window {
            return;
        }
        let oldest = blocked
            .iter()
            .min_by_key(|(_, submitted)| *submitted)
            .map(|(id, _)| id.clone())
            .expect("nonempty");
        let evidence = format!(
            "STALL: no step dispatchable for {:?}; failing oldest blocked run",
            self.stall_window
        );
        self.finalize(
            state,
            &oldest,
            RunStatus::Failed,
            &evidence.clone(),
            Some(ErrorClass::operational(evidence)),
        );
    }
}

/// Resolve `payload.<key>` placeholders in step args. Returns the unknown
/// key on failure.
pub fn substitute_payload(
    args: &IndexMap<String, Value>,
    payload: &IndexMap<String, Value>,
) -> Result<IndexMap<String, Value>, String> {
    let mut resolved = IndexMap::new();
    for (name, value) in args {
        let value = match value.as_str().and_then(|s| s.strip_prefix("payload.")) {
            Some(key) => payload
                .get(key)
                .cloned()
                .ok_or_else(|| key.to_string())?,
            None => value.clone(),
        };
        resolved.insert(name.clone(), value);
    }
    Ok(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_placeholders_resolve_or_fail() {
        let mut args = IndexMap::new();
        args.insert("protocol".to_string(), Value::String("payload.protocol".to_string()));
        args.insert("fixed".to_string(), Value::from(3));
        let mut payload = IndexMap::new();
        payload.insert("protocol".to_string(), Value::String("name: p\ncommands: []\n".to_string()));
        let resolved = substitute_payload(&args, &payload).unwrap();
        assert_eq!(resolved["protocol"].as_str().unwrap(), "name: p\ncommands: []\n");
        assert_eq!(resolved["fixed"], Value::from(3));

        let mut missing = IndexMap::new();
        missing.insert("x".to_string(), Value::String("payload.absent".to_string()));
        assert_eq!(substitute_payload(&missing, &payload).unwrap_err(), "absent");
    }

    #[test]
    fn ledger_reserves_pairs_atomically() {
        let mut ledger =
            StationLedger::with_stations(["a", "b", "c"].into_iter());
        // a holds a plate.
        if let Some(occupied) = ledger.stations.get_mut("a") {
            occupied.occupied = true;
        }
        assert!(ledger.can_transfer("a", "b"));
        assert!(!ledger.can_transfer("b", "a"), "source empty");
        assert!(!ledger.can_transfer("a", "unknown"));
        assert!(ledger.reserve_pair("a", "b", "run-1"));
        // Both stations now reserved: a symmetric transfer cannot grab them.
        assert!(!ledger.reserve_pair("a", "c", "run-2"));
        ledger.release("run-1");
        assert!(ledger.reserve_pair("a", "c", "run-2"));
    }

    #[test]
    fn classification_matches_taxonomy() {
        let ok = ActionResult::succeeded(None, 1.0);
        assert!(classify_error(&ok, None).is_none());
        let operational = classify_error(&ok, Some("audit: plate missing")).unwrap();
        assert_eq!(operational.class, ErrorKind::Operational);
        let failed = ActionResult::failed("DEVICE_FAULT", "boom", 1.0);
        let software = classify_error(&failed, None).unwrap();
        assert_eq!(software.class, ErrorKind::Software);
    }
}
