//! Application-level tests over the simulated workcells.

use std::sync::Arc;

use modcell::apps::{
    color_picker_run, growth_assay_run, pcr_run, ExperimentPlan, GrowthPlan,
};
use modcell::events::EventLog;
use modcell::exec::{ErrorKind, Executor, ExecutorOptions};
use modcell::fixtures;
use modcell::sim::{SimOptions, SimWorkcell};

fn sim_exec(spec: &modcell::WorkcellSpec, seed: u64) -> (SimWorkcell, Executor) {
    let cell = SimWorkcell::build(
        spec,
        &SimOptions {
            seed,
            ..SimOptions::default()
        },
    )
    .unwrap();
    let exec = Executor::for_sim(
        &cell,
        Arc::new(EventLog::in_memory()),
        ExecutorOptions::default(),
    )
    .unwrap();
    (cell, exec)
}

#[test]
fn pcr_app_leaves_processed_plate_at_handoff() {
    let (cell, exec) = sim_exec(&fixtures::rpl_workcell(), 1);
    let record = pcr_run(&exec).unwrap();
    assert_eq!(record.step_results.len(), 14);
    let world = cell.world();
    let world = world.lock().unwrap();
    let plate = world.plate_at("handoff").unwrap();
    assert!(!plate.sealed && !plate.lidded);
    assert_eq!(plate.programs, ["pcr_40_cycles"]);
    exec.shutdown();
}

#[test]
fn color_picker_small_run_is_deterministic_and_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan::new([120.0; 3], 12, 4, 5);

    let run = |publish: &std::path::Path| {
        let (_cell, exec) = sim_exec(&fixtures::rpl_workcell(), 5);
        let report = color_picker_run(&exec, &plan, publish).unwrap();
        exec.shutdown();
        report
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));

    assert_eq!(a.samples.len(), 12);
    assert_eq!(a.published.len(), 3);
    // Deterministic: same plan + same seed => identical reports.
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    // Best-so-far never worsens, and the table export is well formed.
    let mut last = f64::INFINITY;
    for row in &a.samples {
        assert!(row.best_so_far <= last + 1e-12);
        assert!(row.best_so_far <= row.score + 1e-12);
        last = row.best_so_far;
    }
    assert_eq!(a.to_table().lines().count(), 13);
    // Batch records landed under the publish root.
    for path in &a.published {
        assert!(dir.path().join("a").join(path).is_file());
    }
}

#[test]
fn color_picker_swaps_plates_past_96_wells() {
    let dir = tempfile::tempdir().unwrap();
    let (cell, exec) = sim_exec(&fixtures::rpl_workcell(), 9);
    let plan = ExperimentPlan::new([120.0; 3], 128, 32, 9);
    let report = color_picker_run(&exec, &plan, dir.path()).unwrap();
    assert_eq!(report.samples.len(), 128);
    assert_eq!(report.plates_used, 2);
    let world = cell.world();
    let world = world.lock().unwrap();
    assert_eq!(world.plates_trashed(), 2, "both plates discarded");
    world.check_consistent().unwrap();
    exec.shutdown();
}

#[test]
fn growth_assay_dose_response_on_both_workcells() {
    let plan = GrowthPlan::default();
    for (spec, workflows) in [
        (fixtures::rpl_workcell(), fixtures::growth_workflows_rpl()),
        (fixtures::bio_workcell(), fixtures::growth_workflows_bio()),
    ] {
        let (cell, exec) = sim_exec(&spec, 21);
        let report = growth_assay_run(&exec, &workflows, &plan, &cell.world()).unwrap();
        assert!(report.flagged.is_none(), "{:?}", report.flagged);
        // Untreated wells grow.
        assert!(report.mean_t12[0] > report.mean_t0[0]);
        // Saturating concentration barely grows.
        let top = report.concentrations.len() - 1;
        assert!(report.mean_t12[top] - report.mean_t0[top] < 0.05);
        // Mean dose response is nonincreasing up to reader noise.
        for window in report.mean_t12.windows(2) {
            assert!(window[1] <= window[0] + 0.02, "{:?}", report.mean_t12);
        }
        exec.shutdown();
    }
}

#[test]
fn disabled_growth_model_is_flagged_as_experiment_error() {
    let (cell, exec) = sim_exec(&fixtures::rpl_workcell(), 33);
    cell.world().lock().unwrap().growth.enabled = false;
    let report = growth_assay_run(
        &exec,
        &fixtures::growth_workflows_rpl(),
        &GrowthPlan::default(),
        &cell.world(),
    )
    .unwrap();
    let evidence = report.flagged.expect("analysis hook fires");
    assert!(evidence.contains("no growth"));
    let record = exec.get_run(&report.t12_run).unwrap();
    let error = record.error.expect("attached to the run record");
    assert_eq!(error.class, ErrorKind::Experiment);
    exec.shutdown();
}
