//! End-to-end executor tests against the simulated RPL workcell.

use std::sync::Arc;
use std::time::Duration;

use indexmap::IndexMap;
use modcell::events::{reconstruct_runs, EventLog};
use modcell::exec::{ErrorKind, Executor, ExecutorOptions, RunStatus};
use modcell::fixtures;
use modcell::sim::{SimOptions, SimWorkcell};

fn build_cell(seed: u64, time_scale: f64) -> SimWorkcell {
    let spec = fixtures::rpl_workcell();
    SimWorkcell::build(
        &spec,
        &SimOptions {
            seed,
            time_scale,
            ..SimOptions::default()
        },
    )
    .expect("sim workcell builds")
}

fn build_executor(cell: &SimWorkcell, options: ExecutorOptions) -> Executor {
    Executor::for_sim(cell, Arc::new(EventLog::in_memory()), options).expect("executor starts")
}

#[test]
fn pcr_run_completes_end_to_end() {
    let cell = build_cell(7, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let log = Arc::new(EventLog::open(&dir.path().join("events.jsonl")).unwrap());
    let exec = Executor::for_sim(&cell, Arc::clone(&log), ExecutorOptions::default()).unwrap();

    let workflow = fixtures::pcr_workflow();
    let run_id = exec
        .submit_run(&workflow, IndexMap::new(), "exp-pcr")
        .unwrap();
    let record = exec.wait_run(&run_id, Duration::from_secs(20)).unwrap();
    assert_eq!(record.status, RunStatus::Completed, "{:?}", record.detail);
    assert_eq!(record.step_results.len(), workflow.flowdef.len());
    assert!(record.error.is_none());

    // The plate ended up at the handoff nest, unsealed, thermocycled, with
    // 30 uL in each of the three prepared wells.
    let world = cell.world();
    let world = world.lock().unwrap();
    let plate = world.plate_at("handoff").expect("plate delivered");
    assert!(!plate.sealed);
    assert_eq!(plate.programs, vec!["pcr_40_cycles".to_string()]);
    for well in ["A1", "A2", "A3"] {
        let idx = modcell::sim::well_index(well).unwrap();
        assert!((plate.wells[idx].volume - 30.0).abs() < 1e-9);
    }
    world.check_consistent().unwrap();
    drop(world);

    // The durable event stream replays into one well-formed run.
    exec.shutdown();
    let events = modcell::events::read_events(log.path().unwrap()).unwrap();
    let runs = reconstruct_runs(&events);
    let summary = runs.get(&run_id).unwrap();
    assert!(summary.well_formed);
    assert_eq!(summary.status, "completed");
    assert_eq!(summary.steps.len(), workflow.flowdef.len());
}

#[test]
fn injected_fail_is_classified_software() {
    let cell = build_cell(11, 0.0);
    let exec = build_executor(&cell, ExecutorOptions::default());

    let mut args = IndexMap::new();
    args.insert("mode".to_string(), serde_json::json!("fail"));
    cell.client("sealer").unwrap().admin("inject_fault", &args).unwrap();

    let run_id = exec
        .submit_run(&fixtures::pcr_workflow(), IndexMap::new(), "exp-fault")
        .unwrap();
    let record = exec.wait_run(&run_id, Duration::from_secs(20)).unwrap();
    assert_eq!(record.status, RunStatus::Failed);
    let error = record.error.expect("error classified");
    assert_eq!(error.class, ErrorKind::Software);
    assert!(error.evidence.contains("INJECTED_FAULT"), "{}", error.evidence);
    exec.shutdown();
}

#[test]
fn silent_fault_is_classified_operational() {
    let cell = build_cell(13, 0.0);
    let exec = build_executor(&cell, ExecutorOptions::default());

    // The arm will report success on its next transfer without moving the
    // plate; the world audit contradicts the report.
    let mut args = IndexMap::new();
    args.insert("mode".to_string(), serde_json::json!("silent"));
    cell.client("pf400").unwrap().admin("inject_fault", &args).unwrap();

    let run_id = exec
        .submit_run(&fixtures::pcr_workflow(), IndexMap::new(), "exp-silent")
        .unwrap();
    let record = exec.wait_run(&run_id, Duration::from_secs(20)).unwrap();
    assert_eq!(record.status, RunStatus::Failed);
    let error = record.error.expect("error classified");
    assert_eq!(error.class, ErrorKind::Operational);
    exec.shutdown();
}

#[test]
fn blocked_run_fails_with_operational_stall() {
    let cell = build_cell(17, 0.0);
    let exec = build_executor(
        &cell,
        ExecutorOptions {
            stall_window: Duration::from_millis(300),
            ..ExecutorOptions::default()
        },
    );

    // The deck is empty, so a deck -> trash transfer can never be dispatched.
    let (_, _, trash) = fixtures::color_picker_workflows();
    let run_id = exec.submit_run(&trash, IndexMap::new(), "exp-stall").unwrap();
    let record = exec.wait_run(&run_id, Duration::from_secs(10)).unwrap();
    assert_eq!(record.status, RunStatus::Failed);
    let error = record.error.expect("error classified");
    assert_eq!(error.class, ErrorKind::Operational);
    assert!(error.evidence.contains("STALL"), "{}", error.evidence);
    exec.shutdown();
}

#[test]
fn cancel_stops_before_next_dispatch() {
    // Slow the simulation down so the run is still going when we cancel.
    let cell = build_cell(19, 0.02);
    let exec = build_executor(&cell, ExecutorOptions::default());

    let workflow = fixtures::pcr_workflow();
    let run_id = exec
        .submit_run(&workflow, IndexMap::new(), "exp-cancel")
        .unwrap();
    std::thread::sleep(Duration::from_millis(150));
    assert!(exec.cancel_run(&run_id));
    let record = exec.wait_run(&run_id, Duration::from_secs(30)).unwrap();
    assert_eq!(record.status, RunStatus::Cancelled);
    assert!(
        record.step_results.len() < workflow.flowdef.len(),
        "cancelled run should not have completed every step"
    );
    exec.shutdown();
}

#[test]
fn crash_recovery_resumes_without_duplicating_steps() {
    let cell = build_cell(23, 0.02);
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("runs.jsonl");
    let options = ExecutorOptions {
        store_path: Some(store_path.clone()),
        ..ExecutorOptions::default()
    };

    let workflow = fixtures::pcr_workflow();
    let first = build_executor(&cell, options.clone());
    let run_id = first
        .submit_run(&workflow, IndexMap::new(), "exp-crash")
        .unwrap();

    // Let a few steps land, then kill the executor abruptly.
    loop {
        let record = first.get_run(&run_id).unwrap();
        if record.step_results.len() >= 3 {
            break;
        }
        assert!(!record.status.is_terminal(), "{:?}", record.detail);
        std::thread::sleep(Duration::from_millis(20));
    }
    first.shutdown();
    let done_before = first.get_run(&run_id).unwrap().step_results.len();
    drop(first);

    // A new executor over the same store resumes the interrupted run.
    let second = build_executor(&cell, options);
    let record = second.wait_run(&run_id, Duration::from_secs(60)).unwrap();
    assert_eq!(record.status, RunStatus::Completed, "{:?}", record.detail);
    assert_eq!(record.step_results.len(), workflow.flowdef.len());
    assert!(done_before <= record.step_results.len());

    // Every module performed each of its steps exactly once across both
    // executor lifetimes: at-least-once restart plus durable step results
    // nets out to at-most-once dispatch.
    let per_module: IndexMap<&str, u64> = workflow
        .flowdef
        .iter()
        .fold(IndexMap::new(), |mut acc, step| {
            *acc.entry(step.module.as_str()).or_insert(0) += 1;
            acc
        });
    for (module, expected) in per_module {
        let node = cell.node(module).unwrap();
        assert_eq!(
            node.actions_performed(),
            expected,
            "module {module} should have run each step exactly once"
        );
    }
    second.shutdown();
}

#[test]
fn growth_workflows_retarget_between_workcells() {
    // The same two-part assay validates against both workcells; the files
    // differ only in which module names carry each step.
    let (t0_rpl, t12_rpl) = fixtures::growth_workflows_rpl();
    let (t0_bio, t12_bio) = fixtures::growth_workflows_bio();
    let rpl = fixtures::rpl_workcell();
    let bio = fixtures::bio_workcell();
    for (wf, cell) in [(&t0_rpl, &rpl), (&t12_rpl, &rpl), (&t0_bio, &bio), (&t12_bio, &bio)] {
        assert!(modcell::validate(wf, cell, None).ok, "{}", wf.name);
    }
    assert_eq!(
        t0_rpl.flowdef.iter().map(|s| &s.command).collect::<Vec<_>>(),
        t0_bio.flowdef.iter().map(|s| &s.command).collect::<Vec<_>>()
    );
    assert_eq!(
        t12_rpl.flowdef.iter().map(|s| &s.command).collect::<Vec<_>>(),
        t12_bio.flowdef.iter().map(|s| &s.command).collect::<Vec<_>>()
    );
}
