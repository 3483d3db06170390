//! Acceptance suite: nine end-to-end checks over the whole stack, printed as
//! one pass/fail line each. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines as they
//! complete; the test fails if any criterion fails or blows its time budget.

use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde_json::Value;

use modcell::apps::{color_picker_run, growth_assay_run, pcr_run, ExperimentPlan, GrowthPlan};
use modcell::events::{read_events, reconstruct_runs, EventLog};
use modcell::exec::{ErrorKind, Executor, ExecutorOptions, RunRecord, RunStatus};
use modcell::fixtures;
use modcell::sim::{SimOptions, SimWorkcell};
use modcell::{
    parse_workcell, parse_workflow, validate, AdapterKind, ModuleSpec, StationSpec, StepSpec,
    WorkcellSpec, WorkflowSpec,
};

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

struct Outcome {
    number: usize,
    name: &'static str,
    passed: bool,
    elapsed: Duration,
    message: String,
}

fn run_criterion(
    results: &mut Vec<Outcome>,
    number: usize,
    name: &'static str,
    budget: Duration,
    body: impl FnOnce(),
) {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let mut message = match result {
        Ok(()) => String::new(),
        Err(panic) => panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic with non-string payload".to_string()),
    };
    let mut passed = message.is_empty();
    if passed && elapsed > budget {
        passed = false;
        message = format!("over time budget of {budget:?}");
    }
    println!(
        "criterion {number} ({name}): {} [{:.2}s]{}",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        if message.is_empty() { String::new() } else { format!(" — {message}") },
    );
    results.push(Outcome { number, name, passed, elapsed, message });
}

fn sim(spec: &WorkcellSpec, seed: u64, time_scale: f64, adapter: Option<AdapterKind>) -> SimWorkcell {
    SimWorkcell::build(
        spec,
        &SimOptions { seed, time_scale, adapter_override: adapter },
    )
    .expect("sim workcell builds")
}

fn file_exec(cell: &SimWorkcell, log_path: &Path) -> Executor {
    let log = Arc::new(EventLog::open(log_path).expect("event log opens"));
    Executor::for_sim(cell, log, ExecutorOptions::default()).expect("executor starts")
}

/// Event logs plus the executor records that produced them, accumulated by
/// criteria 3-7 and cross-checked by criterion 8.
type Artifacts = RefCell<Vec<(PathBuf, Vec<RunRecord>)>>;

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().expect("tempdir");
    let dir = dir.path().to_path_buf();
    let artifacts: Artifacts = RefCell::new(Vec::new());
    let mut results: Vec<Outcome> = Vec::new();

    run_criterion(&mut results, 1, "wire conformance", Duration::from_secs(1), || {
        criterion_1_wire_conformance();
    });
    run_criterion(&mut results, 2, "spec round-trip and validation", Duration::from_secs(1), || {
        criterion_2_roundtrip_and_validation();
    });
    run_criterion(&mut results, 3, "pcr end-to-end", Duration::from_secs(5), || {
        criterion_3_pcr(&dir, &artifacts);
    });
    run_criterion(&mut results, 4, "color picker trend", Duration::from_secs(60), || {
        criterion_4_color_trend(&dir, &artifacts);
    });
    run_criterion(&mut results, 5, "concurrency safety", Duration::from_secs(120), || {
        criterion_5_concurrency(&dir, &artifacts);
    });
    run_criterion(&mut results, 6, "retargeting", Duration::from_secs(5), || {
        criterion_6_retargeting(&dir, &artifacts);
    });
    run_criterion(&mut results, 7, "error taxonomy", Duration::from_secs(5), || {
        criterion_7_error_taxonomy(&dir, &artifacts);
    });
    run_criterion(&mut results, 8, "event-log consistency", Duration::from_secs(30), || {
        criterion_8_event_log(&artifacts);
    });
    run_criterion(&mut results, 9, "growth dose-response", Duration::from_secs(5), || {
        criterion_9_dose_response();
    });

    let failed: Vec<String> = results
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("criterion {} ({}): {} after {:.2}s", o.number, o.name, o.message, o.elapsed.as_secs_f64()))
        .collect();
    assert!(failed.is_empty(), "\n{}", failed.join("\n"));
}

// ---------------------------------------------------------------------------
// 1. The REST adapter accepts the literal documented wire requests.
// ---------------------------------------------------------------------------

fn criterion_1_wire_conformance() {
    let cell = sim(&fixtures::rpl_workcell(), 1, 0.0, Some(AdapterKind::Rest));
    cell.world().lock().unwrap().create_plate("sealing_nest").unwrap();

    let sealer = cell.endpoint("sealer").expect("sealer endpoint").to_string();
    let state: Value = ureq::get(&format!("{sealer}/state")).call().unwrap().into_json().unwrap();
    assert_eq!(state["state"], "IDLE", "state before action: {state}");

    let response: Value = ureq::post(&format!("{sealer}/action"))
        .set("Content-Type", "application/json")
        .send_string(r#"{"action_handle": "seal", "action_vars": {}}"#)
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(response["status"], "succeeded", "seal response: {response}");

    let sciclops = cell.endpoint("sciclops").expect("sciclops endpoint").to_string();
    let response: Value = ureq::post(&format!("{sciclops}/action"))
        .set("Content-Type", "application/json")
        .send_string(r#"{"action_handle": "get_plate", "action_vars": {"pos": "tower1"}}"#)
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(response["status"], "succeeded", "get_plate response: {response}");

    let world = cell.world();
    let world = world.lock().unwrap();
    assert!(world.plate_at("sealing_nest").unwrap().sealed, "plate was sealed");
    assert!(world.plate_at("stack_exchange").is_some(), "plate delivered to exchange");
}

// ---------------------------------------------------------------------------
// 2. Fixtures round-trip through the parser; broken variants produce exactly
//    the expected finding code.
// ---------------------------------------------------------------------------

fn criterion_2_roundtrip_and_validation() {
    for text in [fixtures::RPL_WORKCELL, fixtures::BIO_WORKCELL] {
        let spec = parse_workcell(text).unwrap();
        let again = parse_workcell(&spec.to_yaml()).unwrap();
        assert_eq!(again, spec, "workcell `{}` round-trips", spec.name);
    }
    for text in [
        fixtures::PCR_WORKFLOW,
        fixtures::GROWTH_T0_RPL,
        fixtures::GROWTH_T12_RPL,
        fixtures::GROWTH_T0_BIO,
        fixtures::GROWTH_T12_BIO,
        fixtures::CP_NEWPLATE,
        fixtures::CP_MIXCOLOR,
        fixtures::CP_TRASHPLATE,
    ] {
        let spec = parse_workflow(text).unwrap();
        let again = parse_workflow(&spec.to_yaml()).unwrap();
        assert_eq!(again, spec, "workflow `{}` round-trips", spec.name);
    }

    let report = validate(&fixtures::pcr_workflow(), &fixtures::rpl_workcell(), None);
    assert!(report.ok, "pcr validates on rpl: {:?}", report.findings);

    // Each mutation must produce exactly one error, with the expected code.
    let cases = [
        (
            fixtures::RPL_WORKCELL.replace("- name: biometra", "- name: thermo"),
            fixtures::PCR_WORKFLOW.to_string(),
            "UNDEFINED_MODULE",
        ),
        (
            fixtures::RPL_WORKCELL.to_string(),
            fixtures::PCR_WORKFLOW.replace("command: seal\n", "command: sealify\n"),
            "UNKNOWN_ACTION",
        ),
        (
            fixtures::RPL_WORKCELL.to_string(),
            fixtures::PCR_WORKFLOW.replace("target: handoff", "target: warp_gate"),
            "UNKNOWN_STATION",
        ),
    ];
    for (cell_text, workflow_text, expected) in cases {
        let report = validate(
            &parse_workflow(&workflow_text).unwrap(),
            &parse_workcell(&cell_text).unwrap(),
            None,
        );
        assert!(!report.ok, "mutation for {expected} must fail validation");
        let codes: Vec<&str> = report.errors().map(|f| f.code.as_str()).collect();
        assert_eq!(codes, vec![expected], "findings: {:?}", report.findings);
    }
}

// ---------------------------------------------------------------------------
// 3. The PCR application completes through the CLI and in-process, with the
//    expected step sequence and world end state.
// ---------------------------------------------------------------------------

fn criterion_3_pcr(dir: &Path, artifacts: &Artifacts) {
    let workflow = fixtures::pcr_workflow();
    let expected_commands: Vec<&str> = workflow.flowdef.iter().map(|s| s.command.as_str()).collect();

    // Through the CLI binary.
    let report_path = dir.join("c3_report.json");
    let cli_log = dir.join("c3_cli.jsonl");
    let output = Command::new(env!("CARGO_BIN_EXE_modcell"))
        .args(["app", "pcr", "--workcell", "rpl", "--seed", "3"])
        .arg("--report")
        .arg(&report_path)
        .arg("--log")
        .arg(&cli_log)
        .output()
        .expect("cli runs");
    assert!(
        output.status.success(),
        "cli exit {:?}; stderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    let record: RunRecord =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(record.status, RunStatus::Completed, "{}", record.detail);
    let commands: Vec<&str> = record.step_results.iter().map(|s| s.command.as_str()).collect();
    assert_eq!(commands, expected_commands);
    // The milestone order: fetch, mix, seal, thermocycle, peel, image, exchange.
    let mut rest = commands.as_slice();
    for milestone in ["get_plate", "run_protocol", "seal", "run_program", "peel", "grab_image"] {
        let at = rest.iter().position(|c| *c == milestone).unwrap_or_else(|| {
            panic!("milestone `{milestone}` missing or out of order in {commands:?}")
        });
        rest = &rest[at + 1..];
    }
    assert_eq!(record.step_results.last().unwrap().step, "move to exchange");

    // In-process, so the final simulated world can be inspected directly.
    let cell = sim(&fixtures::rpl_workcell(), 3, 0.0, None);
    let log_path = dir.join("c3_run.jsonl");
    let exec = file_exec(&cell, &log_path);
    let record2 = pcr_run(&exec).expect("pcr app run");
    exec.shutdown();
    {
        let world = cell.world();
        let world = world.lock().unwrap();
        let plate = world.plate_at("handoff").expect("plate at exchange");
        assert!(!plate.sealed, "seal was peeled");
        assert_eq!(plate.programs, vec!["pcr_40_cycles".to_string()], "thermocycled");
        world.check_consistent().unwrap();
    }
    let snapshot = cell.snapshot();
    assert!(!snapshot["stations"]["handoff"].is_null(), "snapshot shows plate at exchange");

    let mut artifacts = artifacts.borrow_mut();
    artifacts.push((cli_log, vec![record]));
    artifacts.push((log_path, vec![record2]));
}

// ---------------------------------------------------------------------------
// 4. Color-picker optimization trend over batch sizes (property-based).
// ---------------------------------------------------------------------------

struct TrendRun {
    batch_size: usize,
    noiseless: bool,
    final_score: f64,
    elapsed_sim: f64,
}

fn criterion_4_color_trend(dir: &Path, artifacts: &Artifacts) {
    const SEEDS: u64 = 20;
    const SAMPLES: usize = 128;
    let c4_dir = dir.join("c4");
    std::fs::create_dir_all(&c4_dir).unwrap();

    // (batch size, seed, noiseless camera)
    let mut jobs: Vec<(usize, u64, bool)> = Vec::new();
    for batch_size in [1usize, 8, 64] {
        for seed in 0..SEEDS {
            jobs.push((batch_size, seed, false));
        }
    }
    for seed in 0..SEEDS {
        jobs.push((8, seed, true));
    }

    let queue = Mutex::new(jobs);
    let results: Mutex<Vec<TrendRun>> = Mutex::new(Vec::new());
    let logs: Mutex<Vec<(PathBuf, Vec<RunRecord>)>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..8 {
            scope.spawn(|| loop {
                let Some((batch_size, seed, noiseless)) = queue.lock().unwrap().pop() else {
                    return;
                };
                let tag = format!("b{batch_size}-s{seed}{}", if noiseless { "-z" } else { "" });
                let cell = sim(&fixtures::rpl_workcell(), 1000 + seed, 0.0, Some(AdapterKind::Loopback));
                if noiseless {
                    cell.world().lock().unwrap().camera_sigma = 0.0;
                }
                let log_path = c4_dir.join(format!("{tag}.jsonl"));
                let exec = file_exec(&cell, &log_path);
                let plan = ExperimentPlan::new([120.0; 3], SAMPLES, batch_size, seed);
                let report = color_picker_run(&exec, &plan, &c4_dir.join(&tag)).expect("run");
                let records = exec.list_runs(None);
                exec.shutdown();

                // (a) best-so-far is monotone nonincreasing in every run.
                let mut last = f64::INFINITY;
                for row in &report.samples {
                    assert!(
                        row.best_so_far <= last + 1e-12,
                        "{tag}: best-so-far worsened: {} after {}",
                        row.best_so_far,
                        last
                    );
                    last = row.best_so_far;
                }
                results.lock().unwrap().push(TrendRun {
                    batch_size,
                    noiseless,
                    final_score: report.final_score,
                    elapsed_sim: report.elapsed_sim,
                });
                logs.lock().unwrap().push((log_path, records));
            });
        }
    });

    let results = results.into_inner().unwrap();
    let mean = |pick: &dyn Fn(&TrendRun) -> Option<f64>| -> f64 {
        let values: Vec<f64> = results.iter().filter_map(|r| pick(r)).collect();
        assert_eq!(values.len(), SEEDS as usize);
        values.iter().sum::<f64>() / values.len() as f64
    };
    let score_of = |b: usize| {
        mean(&|r: &TrendRun| (!r.noiseless && r.batch_size == b).then_some(r.final_score))
    };
    let elapsed_of = |b: usize| {
        mean(&|r: &TrendRun| (!r.noiseless && r.batch_size == b).then_some(r.elapsed_sim))
    };

    // (b) small batches reach better (lower) final scores per sample budget.
    assert!(
        score_of(1) < score_of(64),
        "mean final score: B=1 {} vs B=64 {}",
        score_of(1),
        score_of(64)
    );
    // (c) but cost more simulated time than large batches.
    assert!(
        elapsed_of(1) > elapsed_of(64),
        "mean simulated time: B=1 {} vs B=64 {}",
        elapsed_of(1),
        elapsed_of(64)
    );
    // Frozen absolute threshold for the noiseless simulator at B=8.
    let good = results
        .iter()
        .filter(|r| r.noiseless && r.final_score <= 15.0)
        .count();
    assert!(
        good as f64 >= 0.9 * SEEDS as f64,
        "noiseless B=8: only {good}/{SEEDS} seeds reached score <= 15"
    );

    artifacts.borrow_mut().extend(logs.into_inner().unwrap());
}

// ---------------------------------------------------------------------------
// 5. Concurrency safety on a synthetic four-arm workcell under 16 concurrent
//    randomized transfer workflows.
// ---------------------------------------------------------------------------

const STRESS_ARMS: usize = 4;
const STRESS_STATIONS: usize = 20;
const STRESS_RUNS: usize = 16;

fn stress_workcell() -> WorkcellSpec {
    let modules = (1..=STRESS_ARMS)
        .map(|i| ModuleSpec {
            name: format!("arm{i}"),
            model: "pf400".to_string(),
            interface: "loopback".to_string(),
            config: IndexMap::new(),
            workcell_coordinates: None,
        })
        .collect();
    let mut locations = IndexMap::new();
    for rank in 0..STRESS_STATIONS {
        let name = format!("st{rank:02}");
        locations.insert(
            name.clone(),
            StationSpec {
                name,
                labware_type: "plate_nest".to_string(),
                coordinates: vec![rank as f64, 0.0, 0.0],
            },
        );
    }
    locations.insert(
        "trash".to_string(),
        StationSpec {
            name: "trash".to_string(),
            labware_type: "trash".to_string(),
            coordinates: vec![-1.0, 0.0, 0.0],
        },
    );
    WorkcellSpec {
        name: "stress_cell".to_string(),
        config: IndexMap::new(),
        modules,
        locations,
        extra: IndexMap::new(),
    }
}

/// Small deterministic generator so the workloads are reproducible without
/// pulling an RNG crate into the CLI's dev-dependencies.
struct XorShift(u64);

impl XorShift {
    fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }
}

/// A workflow whose transfers visit strictly increasing station ranks and end
/// in the trash. Because ranks only increase, the plate at the highest
/// occupied rank can always move, so the whole workload is deadlock-free and
/// any stall detection firing would be a false positive.
fn stress_workflow(run: usize, rng: &mut XorShift) -> WorkflowSpec {
    let mut steps = Vec::new();
    let mut current = run; // each run starts on its own station
    let mut hop = 0;
    while current < STRESS_STATIONS {
        let target_rank = current + 1 + rng.below(4);
        let target = if target_rank >= STRESS_STATIONS || hop >= 4 {
            "trash".to_string()
        } else {
            format!("st{target_rank:02}")
        };
        steps.push(StepSpec {
            name: format!("hop {hop}"),
            module: format!("arm{}", 1 + rng.below(STRESS_ARMS)),
            command: "transfer".to_string(),
            args: IndexMap::from([
                ("source".to_string(), Value::String(format!("st{current:02}"))),
                ("target".to_string(), Value::String(target.clone())),
            ]),
            comment: None,
        });
        if target == "trash" {
            break;
        }
        current = target_rank;
        hop += 1;
    }
    WorkflowSpec {
        name: format!("stress_{run}"),
        metadata: IndexMap::new(),
        modules: (1..=STRESS_ARMS).map(|i| format!("arm{i}")).collect(),
        flowdef: steps,
        extra: IndexMap::new(),
    }
}

fn criterion_5_concurrency(dir: &Path, artifacts: &Artifacts) {
    let spec = stress_workcell();
    let mut rng = XorShift(0x5eed_cafe);
    let mut total_samples = 0usize;

    for round in 0..3u64 {
        let cell = sim(&spec, 40 + round, 0.002, None); // 10 s transfers -> 20 ms real
        {
            let world = cell.world();
            let mut world = world.lock().unwrap();
            for run in 0..STRESS_RUNS {
                world.create_plate(&format!("st{run:02}")).unwrap();
            }
        }
        let log_path = dir.join(format!("c5_round{round}.jsonl"));
        let exec = file_exec(&cell, &log_path);

        // Consistency monitor: hammer the world audit while runs execute.
        let done = AtomicBool::new(false);
        let samples = AtomicUsize::new(0);
        let violations = Mutex::new(Vec::<String>::new());
        std::thread::scope(|scope| {
            scope.spawn(|| {
                let world = cell.world();
                while !done.load(Ordering::Relaxed) {
                    if let Err(problem) = world.lock().unwrap().check_consistent() {
                        violations.lock().unwrap().push(problem);
                    }
                    samples.fetch_add(1, Ordering::Relaxed);
                    std::thread::yield_now();
                }
            });

            let run_ids: Vec<String> = (0..STRESS_RUNS)
                .map(|run| {
                    let workflow = stress_workflow(run, &mut rng);
                    exec.submit_run(&workflow, IndexMap::new(), "exp-stress").unwrap()
                })
                .collect();
            for run_id in &run_ids {
                let record = exec.wait_run(run_id, Duration::from_secs(60)).unwrap();
                assert_eq!(
                    record.status,
                    RunStatus::Completed,
                    "round {round} run {run_id}: {} ({:?})",
                    record.detail,
                    record.error
                );
            }
            done.store(true, Ordering::Relaxed);
        });

        let violations = violations.into_inner().unwrap();
        assert!(violations.is_empty(), "double occupancy observed: {violations:?}");
        total_samples += samples.into_inner();

        // No node ever ran two actions at once.
        for arm in 1..=STRESS_ARMS {
            let node = cell.node(&format!("arm{arm}")).unwrap();
            assert!(node.max_inflight() <= 1, "arm{arm} overlapped actions");
        }
        {
            let world = cell.world();
            let world = world.lock().unwrap();
            world.check_consistent().unwrap();
            assert_eq!(world.plates_trashed(), STRESS_RUNS as u64);
        }
        let records = exec.list_runs(None);
        exec.shutdown();
        artifacts.borrow_mut().push((log_path, records));
    }

    assert!(
        total_samples >= 1000,
        "only {total_samples} consistency checks sampled under load"
    );
}

// ---------------------------------------------------------------------------
// 6. The growth assay retargets across differently named workcells.
// ---------------------------------------------------------------------------

fn criterion_6_retargeting(dir: &Path, artifacts: &Artifacts) {
    // The workflow files differ only on lines that carry a module name.
    let renames = [("sciclops", "stacker"), ("pf400", "platecrane"), ("ot2", "solo")];
    for (rpl_text, bio_text) in [
        (fixtures::GROWTH_T0_RPL, fixtures::GROWTH_T0_BIO),
        (fixtures::GROWTH_T12_RPL, fixtures::GROWTH_T12_BIO),
    ] {
        assert_eq!(rpl_text.lines().count(), bio_text.lines().count());
        for (left, right) in rpl_text.lines().zip(bio_text.lines()) {
            if left != right {
                let renamed = renames.iter().any(|(from, to)| {
                    left.contains(from) && left.replace(from, to) == right
                });
                assert!(renamed, "non-module-name difference:\n  {left}\n  {right}");
            }
        }
    }

    // Both variants validate and execute with identical command sequences.
    let mut sequences: Vec<Vec<(String, String)>> = Vec::new();
    for (spec, workflows, label) in [
        (fixtures::rpl_workcell(), fixtures::growth_workflows_rpl(), "rpl"),
        (fixtures::bio_workcell(), fixtures::growth_workflows_bio(), "bio"),
    ] {
        for workflow in [&workflows.0, &workflows.1] {
            let report = validate(workflow, &spec, None);
            assert!(report.ok, "{label} {}: {:?}", workflow.name, report.findings);
        }
        let cell = sim(&spec, 21, 0.0, None);
        let log_path = dir.join(format!("c6_{label}.jsonl"));
        let exec = file_exec(&cell, &log_path);
        let report = growth_assay_run(&exec, &workflows, &GrowthPlan::default(), &cell.world())
            .expect("assay runs");
        assert!(report.flagged.is_none(), "{label}: {:?}", report.flagged);
        let mut sequence = Vec::new();
        let mut records = Vec::new();
        for run_id in [&report.t0_run, &report.t12_run] {
            let record = exec.get_run(run_id).unwrap();
            assert_eq!(record.status, RunStatus::Completed);
            sequence.extend(
                record.step_results.iter().map(|s| (s.step.clone(), s.command.clone())),
            );
            records.push(record);
        }
        sequences.push(sequence);
        exec.shutdown();
        artifacts.borrow_mut().push((log_path, records));
    }
    assert_eq!(sequences[0], sequences[1], "command sequences differ between workcells");
}

// ---------------------------------------------------------------------------
// 7. Fault injection exercises all three error classes.
// ---------------------------------------------------------------------------

fn criterion_7_error_taxonomy(dir: &Path, artifacts: &Artifacts) {
    let mut fault_args = IndexMap::new();
    fault_args.insert("mode".to_string(), serde_json::json!("fail"));

    // (a) software: the node itself reports the fault.
    let cell = sim(&fixtures::rpl_workcell(), 71, 0.0, None);
    cell.client("sealer").unwrap().admin("inject_fault", &fault_args).unwrap();
    let log_a = dir.join("c7_software.jsonl");
    let exec = file_exec(&cell, &log_a);
    let run_id = exec
        .submit_run(&fixtures::pcr_workflow(), IndexMap::new(), "exp-c7a")
        .unwrap();
    let record = exec.wait_run(&run_id, Duration::from_secs(20)).unwrap();
    assert_eq!(record.status, RunStatus::Failed);
    let error = record.error.clone().expect("classified");
    assert_eq!(error.class, ErrorKind::Software, "{}", error.evidence);
    exec.shutdown();
    artifacts.borrow_mut().push((log_a, vec![record]));

    // (b) operational: the node claims success, the world audit disagrees.
    let mut silent_args = IndexMap::new();
    silent_args.insert("mode".to_string(), serde_json::json!("silent"));
    let cell = sim(&fixtures::rpl_workcell(), 72, 0.0, None);
    cell.client("pf400").unwrap().admin("inject_fault", &silent_args).unwrap();
    let log_b = dir.join("c7_operational.jsonl");
    let exec = file_exec(&cell, &log_b);
    let run_id = exec
        .submit_run(&fixtures::pcr_workflow(), IndexMap::new(), "exp-c7b")
        .unwrap();
    let record = exec.wait_run(&run_id, Duration::from_secs(20)).unwrap();
    assert_eq!(record.status, RunStatus::Failed);
    let error = record.error.clone().expect("classified");
    assert_eq!(error.class, ErrorKind::Operational, "{}", error.evidence);
    exec.shutdown();
    artifacts.borrow_mut().push((log_b, vec![record]));

    // (c) experiment: every step succeeds, but the science is wrong.
    let cell = sim(&fixtures::rpl_workcell(), 73, 0.0, None);
    cell.world().lock().unwrap().growth.enabled = false;
    let log_c = dir.join("c7_experiment.jsonl");
    let exec = file_exec(&cell, &log_c);
    let report = growth_assay_run(
        &exec,
        &fixtures::growth_workflows_rpl(),
        &GrowthPlan::default(),
        &cell.world(),
    )
    .expect("assay completes");
    assert!(report.flagged.is_some(), "analysis hook must flag the flat response");
    let t0 = exec.get_run(&report.t0_run).unwrap();
    let t12 = exec.get_run(&report.t12_run).unwrap();
    assert_eq!(t12.status, RunStatus::Completed, "execution itself succeeded");
    let error = t12.error.clone().expect("classified on the record");
    assert_eq!(error.class, ErrorKind::Experiment, "{}", error.evidence);
    exec.shutdown();
    artifacts.borrow_mut().push((log_c, vec![t0, t12]));
}

// ---------------------------------------------------------------------------
// 8. Replaying every log written above reconstructs exactly the executor's
//    records; sequence numbers are gap-free, including under the criterion-5
//    stress.
// ---------------------------------------------------------------------------

fn criterion_8_event_log(artifacts: &Artifacts) {
    let artifacts = artifacts.borrow();
    assert!(artifacts.len() >= 80, "earlier criteria produced too few logs to check");
    let mut runs_checked = 0usize;
    for (path, records) in artifacts.iter() {
        // read_events itself fails on any sequence gap.
        let events = read_events(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let summaries = reconstruct_runs(&events);
        for record in records {
            let summary = summaries
                .get(&record.run_id)
                .unwrap_or_else(|| panic!("{}: run {} not in log", path.display(), record.run_id));
            assert!(summary.well_formed, "{}: run {} malformed", path.display(), record.run_id);
            let expected: Vec<&str> = record.step_results.iter().map(|s| s.step.as_str()).collect();
            let replayed: Vec<&str> = summary
                .steps
                .iter()
                .filter(|(_, status)| status != "rejected") // busy-retried dispatches
                .map(|(name, _)| name.as_str())
                .collect();
            assert_eq!(
                replayed,
                expected,
                "{}: run {} step mismatch",
                path.display(),
                record.run_id
            );
            runs_checked += 1;
        }
    }
    assert!(runs_checked >= 100, "only {runs_checked} runs cross-checked");
}

// ---------------------------------------------------------------------------
// 9. Growth-assay dose-response shape over four replicates.
// ---------------------------------------------------------------------------

fn criterion_9_dose_response() {
    let plan = GrowthPlan::default();
    let mut mean_t12 = vec![0.0f64; plan.concentrations.len()];
    let replicates = [201u64, 202, 203, 204];
    for &seed in &replicates {
        let cell = sim(&fixtures::rpl_workcell(), seed, 0.0, None);
        let exec = Executor::for_sim(
            &cell,
            Arc::new(EventLog::in_memory()),
            ExecutorOptions::default(),
        )
        .unwrap();
        let report = growth_assay_run(&exec, &fixtures::growth_workflows_rpl(), &plan, &cell.world())
            .expect("assay runs");
        exec.shutdown();
        assert!(report.flagged.is_none(), "seed {seed}: {:?}", report.flagged);
        // Zero-concentration wells grow in every replicate.
        assert!(
            report.mean_t12[0] > report.mean_t0[0],
            "seed {seed}: untreated wells did not grow"
        );
        for (acc, value) in mean_t12.iter_mut().zip(&report.mean_t12) {
            *acc += value / replicates.len() as f64;
        }
    }
    // Nonincreasing in concentration, up to residual reader noise on the
    // 32-reading means (3 sigma of 0.005 / sqrt(32)).
    for (i, window) in mean_t12.windows(2).enumerate() {
        assert!(
            window[1] <= window[0] + 0.003,
            "mean OD(T12) increases at concentration index {}: {:?}",
            i + 1,
            mean_t12
        );
    }
}
