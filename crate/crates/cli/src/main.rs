//! `modcell` — operator command line for the modular laboratory stack.
//!
//! Verbs: `validate` (check a workflow against a workcell), `serve` (host a
//! simulated workcell plus executor behind a small REST API), `run` (execute
//! one workflow, self-hosted or against a serve instance), `app` (the
//! bundled applications), and `events` (tail or replay an event log).
//!
//! Output contract: machine-readable JSON on stdout, human prose on stderr.
//! Exit codes: 0 success, 1 validation failure, 2 usage/configuration
//! error, 3 runtime failure (run failed, log corrupt, server unreachable).

mod serve;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use serde_json::{json, Value};

use modcell::apps;
use modcell::events::{read_events, reconstruct_runs, EventLog, ReplayError};
use modcell::exec::{Executor, ExecutorOptions, RunStatus, SubmitError};
use modcell::sim::{SimOptions, SimWorkcell};
use modcell::specs::{parse_workcell, parse_workflow, validate, AdapterKind, WorkcellSpec, WorkflowSpec};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "modcell", version, about = "Modular laboratory orchestration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a workflow document against a workcell document.
    Validate {
        /// Workflow YAML path.
        workflow: PathBuf,
        /// Workcell YAML path, or the builtin names `rpl` / `bio`.
        workcell: String,
        /// Also start the simulated modules and validate against their live
        /// self-descriptions (about/online).
        #[arg(long)]
        live: bool,
    },
    /// Host a workcell: one simulated node per module plus an executor,
    /// controllable over a REST API. Runs until interrupted.
    Serve {
        /// Workcell YAML path, or `rpl` / `bio`.
        workcell: String,
        #[command(flatten)]
        sim: SimFlags,
        /// TCP port for the control API (0 picks a free port).
        #[arg(long, default_value_t = 0)]
        api_port: u16,
        /// Append run records here (enables crash recovery).
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Execute one workflow to completion and print its run record.
    Run {
        /// Workflow YAML path.
        workflow: PathBuf,
        /// Workcell YAML path, or `rpl` / `bio` (self-hosted mode).
        #[arg(long, default_value = "rpl")]
        workcell: String,
        /// YAML or JSON file with payload key/values.
        #[arg(long)]
        payload: Option<PathBuf>,
        /// Submit to a running `serve` instance instead of self-hosting,
        /// e.g. http://127.0.0.1:8040. Overridable via MODCELL_ADDRESS.
        #[arg(long, env = "MODCELL_ADDRESS")]
        address: Option<String>,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Run a bundled application and print the report path.
    App {
        #[command(subcommand)]
        app: AppCommand,
    },
    /// Inspect an event log.
    Events {
        #[command(subcommand)]
        events: EventsCommand,
    },
}

#[derive(Args, Clone)]
struct SimFlags {
    /// World RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Real seconds per simulated second (0 = run instantly).
    #[arg(long, default_value_t = 0.0)]
    time_scale: f64,
    /// Force every module onto one adapter (rest, tcp, loopback) instead of
    /// the per-module `interface:` entries.
    #[arg(long)]
    adapter: Option<String>,
    /// Append the event log to this file.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Subcommand, Clone)]
enum AppCommand {
    /// PCR preparation, thermocycling, and imaging.
    Pcr {
        #[command(flatten)]
        common: AppFlags,
    },
    /// Closed-loop color matching with the evolutionary solver.
    ColorPicker {
        /// Total samples to mix and score.
        #[arg(long = "N", default_value_t = 128)]
        total_samples: usize,
        /// Samples per batch.
        #[arg(long = "B", default_value_t = 8)]
        batch_size: usize,
        /// Target color as r,g,b.
        #[arg(long, default_value = "120,120,120")]
        target: String,
        /// Directory for published batch records.
        #[arg(long, default_value = "publish")]
        publish_dir: PathBuf,
        #[command(flatten)]
        common: AppFlags,
    },
    /// Two-part growth assay with a dose-response readout.
    GrowthAssay {
        /// Simulated incubation in hours.
        #[arg(long, default_value_t = 12.0)]
        hours: f64,
        #[command(flatten)]
        common: AppFlags,
    },
}

#[derive(Args, Clone)]
struct AppFlags {
    /// Workcell YAML path, or `rpl` / `bio`.
    #[arg(long, default_value = "rpl")]
    workcell: String,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    sim: SimFlags,
}

#[derive(Subcommand, Clone)]
enum EventsCommand {
    /// Print events as JSON lines, starting after a sequence cursor.
    Tail {
        /// Event log file.
        log: PathBuf,
        /// Only events with seq greater than this.
        #[arg(long, default_value_t = 0)]
        cursor: u64,
        /// Keep polling the file for new events.
        #[arg(long)]
        follow: bool,
    },
    /// Verify the log and print reconstructed per-run summaries.
    Replay {
        /// Event log file.
        log: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { workflow, workcell, live } => cmd_validate(&workflow, &workcell, live),
        Command::Serve { workcell, sim, api_port, store } => {
            serve::cmd_serve(&workcell, &sim, api_port, store)
        }
        Command::Run { workflow, workcell, payload, address, sim } => {
            cmd_run(&workflow, &workcell, payload.as_deref(), address.as_deref(), &sim)
        }
        Command::App { app } => cmd_app(&app),
        Command::Events { events } => cmd_events(&events),
    };
    ExitCode::from(code)
}

/// Resolve a workcell argument: builtin name or file path.
fn load_workcell(name: &str) -> Result<WorkcellSpec, String> {
    match name {
        "rpl" => Ok(modcell::fixtures::rpl_workcell()),
        "bio" => Ok(modcell::fixtures::bio_workcell()),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read workcell `{path}`: {e}"))?;
            parse_workcell(&text).map_err(|e| format!("workcell `{path}`: {e}"))
        }
    }
}

fn load_workflow(path: &std::path::Path) -> Result<WorkflowSpec, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read workflow `{}`: {e}", path.display()))?;
    parse_workflow(&text).map_err(|e| format!("workflow `{}`: {e}", path.display()))
}

impl SimFlags {
    fn adapter_kind(&self) -> Result<Option<AdapterKind>, String> {
        match self.adapter.as_deref() {
            None => Ok(None),
            Some("rest") => Ok(Some(AdapterKind::Rest)),
            Some("tcp") => Ok(Some(AdapterKind::Tcp)),
            Some("loopback") => Ok(Some(AdapterKind::Loopback)),
            Some(other) => Err(format!("unknown adapter `{other}` (rest|tcp|loopback)")),
        }
    }

    fn sim_options(&self) -> Result<SimOptions, String> {
        if self.time_scale < 0.0 {
            return Err("time-scale must be >= 0".to_string());
        }
        Ok(SimOptions {
            seed: self.seed,
            time_scale: self.time_scale,
            adapter_override: self.adapter_kind()?,
        })
    }

    fn event_log(&self) -> Result<Arc<EventLog>, String> {
        match &self.log {
            Some(path) => EventLog::open(path)
                .map(Arc::new)
                .map_err(|e| format!("event log `{}`: {e}", path.display())),
            None => Ok(Arc::new(EventLog::in_memory())),
        }
    }
}

/// Build the full simulated stack from the common flags.
fn build_stack(
    workcell: &str,
    sim: &SimFlags,
    store: Option<PathBuf>,
) -> Result<(SimWorkcell, Executor), String> {
    let spec = load_workcell(workcell)?;
    let cell = SimWorkcell::build(&spec, &sim.sim_options()?)
        .map_err(|e| format!("cannot build workcell: {e}"))?;
    let log = sim.event_log()?;
    let executor = Executor::for_sim(
        &cell,
        log,
        ExecutorOptions {
            store_path: store,
            ..ExecutorOptions::default()
        },
    )
    .map_err(|e| format!("cannot start executor: {e}"))?;
    Ok((cell, executor))
}

fn usage_error(message: &str) -> u8 {
    eprintln!("error: {message}");
    EXIT_USAGE
}

fn cmd_validate(workflow_path: &std::path::Path, workcell_name: &str, live: bool) -> u8 {
    let workflow = match load_workflow(workflow_path) {
        Ok(wf) => wf,
        Err(e) => return usage_error(&e),
    };
    let workcell = match load_workcell(workcell_name) {
        Ok(wc) => wc,
        Err(e) => return usage_error(&e),
    };
    // `--live` additionally checks each module's self-description and
    // liveness by actually starting the simulated nodes.
    let live_cell = if live {
        match SimWorkcell::build(&workcell, &SimOptions::default()) {
            Ok(cell) => Some(cell),
            Err(e) => return usage_error(&format!("cannot start live workcell: {e}")),
        }
    } else {
        None
    };
    let directory = live_cell
        .as_ref()
        .map(|c| c as &dyn modcell::specs::ModuleDirectory);
    let report = validate(&workflow, &workcell, directory);
    println!("{}", serde_json::to_string_pretty(&json!({
        "ok": report.ok,
        "workflow": workflow.name,
        "workcell": workcell.name,
        "findings": report.findings,
    })).expect("report serializes"));
    for finding in &report.findings {
        eprintln!(
            "{:?} {}: {} ({})",
            finding.severity, finding.code, finding.message, finding.subject
        );
    }
    if report.ok {
        eprintln!("ok: `{}` fits `{}`", workflow.name, workcell.name);
        EXIT_OK
    } else {
        EXIT_VALIDATION
    }
}

fn load_payload(path: Option<&std::path::Path>) -> Result<IndexMap<String, Value>, String> {
    let Some(path) = path else {
        return Ok(IndexMap::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read payload `{}`: {e}", path.display()))?;
    // YAML is a superset of JSON, so one parser covers both.
    serde_yaml::from_str(&text).map_err(|e| format!("payload `{}`: {e}", path.display()))
}

fn cmd_run(
    workflow_path: &std::path::Path,
    workcell: &str,
    payload_path: Option<&std::path::Path>,
    address: Option<&str>,
    sim: &SimFlags,
) -> u8 {
    let payload = match load_payload(payload_path) {
        Ok(p) => p,
        Err(e) => return usage_error(&e),
    };
    let workflow_text = match std::fs::read_to_string(workflow_path) {
        Ok(t) => t,
        Err(e) => return usage_error(&format!("cannot read workflow `{}`: {e}", workflow_path.display())),
    };
    if let Err(e) = parse_workflow(&workflow_text) {
        return usage_error(&format!("workflow `{}`: {e}", workflow_path.display()));
    }

    if let Some(address) = address {
        return run_remote(address, &workflow_text, &payload);
    }

    let workflow = parse_workflow(&workflow_text).expect("checked above");
    let (_cell, executor) = match build_stack(workcell, sim, None) {
        Ok(stack) => stack,
        Err(e) => return usage_error(&e),
    };
    let run_id = match executor.submit_run(&workflow, payload, "cli") {
        Ok(id) => id,
        Err(SubmitError::ValidationFailed(report)) => {
            println!("{}", serde_json::to_string_pretty(&json!({
                "ok": false,
                "findings": report.findings,
            })).expect("report serializes"));
            for finding in &report.findings {
                eprintln!("{:?} {}: {}", finding.severity, finding.code, finding.message);
            }
            return EXIT_VALIDATION;
        }
        Err(SubmitError::Io(e)) => return usage_error(&format!("cannot submit run: {e}")),
    };
    eprintln!("submitted {run_id}, waiting...");
    let record = executor
        .wait_run(&run_id, Duration::from_secs(24 * 3600))
        .expect("run exists");
    executor.shutdown();
    println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
    report_run_outcome(record.status, &record.detail)
}

fn report_run_outcome(status: RunStatus, detail: &str) -> u8 {
    if status == RunStatus::Completed {
        eprintln!("run completed");
        EXIT_OK
    } else {
        eprintln!("run ended {status:?}: {detail}");
        EXIT_RUNTIME
    }
}

/// Submit to a `serve` instance over its REST API and poll to completion.
fn run_remote(address: &str, workflow_text: &str, payload: &IndexMap<String, Value>) -> u8 {
    let base = address.trim_end_matches('/');
    let body = json!({
        "workflow": workflow_text,
        "payload": payload,
        "experiment_id": "cli",
    });
    let response = match ureq::post(&format!("{base}/runs")).send_json(body) {
        Ok(r) => r,
        Err(ureq::Error::Status(400, response)) => {
            let report: Value = response.into_json().unwrap_or(Value::Null);
            println!("{}", serde_json::to_string_pretty(&report).expect("json"));
            eprintln!("validation failed");
            return EXIT_VALIDATION;
        }
        Err(e) => {
            eprintln!("error: cannot reach `{base}`: {e}");
            return EXIT_RUNTIME;
        }
    };
    let submitted: Value = match response.into_json() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: bad response from server: {e}");
            return EXIT_RUNTIME;
        }
    };
    let Some(run_id) = submitted.get("run_id").and_then(Value::as_str).map(String::from) else {
        eprintln!("error: server response lacks run_id");
        return EXIT_RUNTIME;
    };
    eprintln!("submitted {run_id} to {base}, polling...");
    loop {
        std::thread::sleep(Duration::from_millis(100));
        let record: Value = match ureq::get(&format!("{base}/runs/{run_id}")).call() {
            Ok(r) => r.into_json().unwrap_or(Value::Null),
            Err(e) => {
                eprintln!("error: lost server while polling: {e}");
                return EXIT_RUNTIME;
            }
        };
        let status = record.get("status").and_then(Value::as_str).unwrap_or("");
        if matches!(status, "completed" | "failed" | "cancelled") {
            println!("{}", serde_json::to_string_pretty(&record).expect("json"));
            return if status == "completed" {
                eprintln!("run completed");
                EXIT_OK
            } else {
                eprintln!("run ended {status}");
                EXIT_RUNTIME
            };
        }
    }
}

fn parse_target(text: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("bad target `{text}`: {e}"))?;
    if parts.len() != 3 {
        return Err(format!("target `{text}` must be r,g,b"));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn write_report(
    path: Option<&std::path::Path>,
    default_name: &str,
    report: &impl serde::Serialize,
) -> Result<PathBuf, String> {
    let path = path
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(default_name));
    let bytes = serde_json::to_vec_pretty(report).expect("report serializes");
    std::fs::write(&path, bytes).map_err(|e| format!("cannot write `{}`: {e}", path.display()))?;
    Ok(path)
}

fn cmd_app(app: &AppCommand) -> u8 {
    let common = match app {
        AppCommand::Pcr { common } => common,
        AppCommand::ColorPicker { common, .. } => common,
        AppCommand::GrowthAssay { common, .. } => common,
    };
    let (cell, executor) = match build_stack(&common.workcell, &common.sim, None) {
        Ok(stack) => stack,
        Err(e) => return usage_error(&e),
    };

    let outcome: Result<(PathBuf, String), String> = match app {
        AppCommand::Pcr { common } => apps::pcr_run(&executor)
            .map_err(|e| e.to_string())
            .and_then(|record| {
                let path = write_report(common.report.as_deref(), "pcr_report.json", &record)?;
                Ok((path, format!("pcr run {} completed", record.run_id)))
            }),
        AppCommand::ColorPicker { total_samples, batch_size, target, publish_dir, common } => {
            parse_target(target)
                .and_then(|target| {
                    let mut plan =
                        apps::ExperimentPlan::new(target, *total_samples, *batch_size, common.sim.seed);
                    plan.input_colors = input_colors_of(&cell.spec);
                    apps::color_picker_run(&executor, &plan, publish_dir).map_err(|e| e.to_string())
                })
                .and_then(|report| {
                    let path =
                        write_report(common.report.as_deref(), "color_picker_report.json", &report)?;
                    eprint!("{}", report.to_table());
                    Ok((path, format!(
                        "best score {:.2} after {} samples ({:.0}s simulated)",
                        report.final_score, report.samples.len(), report.elapsed_sim
                    )))
                })
        }
        AppCommand::GrowthAssay { hours, common } => {
            let workflows = match growth_workflows_for(&cell.spec) {
                Ok(w) => w,
                Err(e) => {
                    executor.shutdown();
                    return usage_error(&e);
                }
            };
            let plan = apps::GrowthPlan {
                incubation_hours: *hours,
                ..apps::GrowthPlan::default()
            };
            apps::growth_assay_run(&executor, &workflows, &plan, &cell.world())
                .map_err(|e| e.to_string())
                .and_then(|report| {
                    let path =
                        write_report(common.report.as_deref(), "growth_assay_report.json", &report)?;
                    eprint!("{}", report.to_table());
                    let summary = match &report.flagged {
                        Some(evidence) => format!("assay flagged: {evidence}"),
                        None => "assay completed".to_string(),
                    };
                    Ok((path, summary))
                })
        }
    };
    executor.shutdown();
    match outcome {
        Ok((path, summary)) => {
            println!("{}", path.display());
            eprintln!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Report the workcell's actual reservoir colors for red/green/blue.
fn input_colors_of(spec: &WorkcellSpec) -> [[u8; 3]; 3] {
    let mut colors = [[230, 65, 65], [65, 230, 65], [65, 65, 230]];
    for module in &spec.modules {
        let Some(reservoirs) = module.config.get("reservoirs").and_then(Value::as_object) else {
            continue;
        };
        for (slot, name) in ["red", "green", "blue"].iter().enumerate() {
            if let Some(rgb) = reservoirs
                .get(*name)
                .and_then(|r| r.get("color"))
                .and_then(Value::as_array)
            {
                for (c, value) in rgb.iter().take(3).enumerate() {
                    colors[slot][c] = value.as_u64().unwrap_or(0) as u8;
                }
            }
        }
    }
    colors
}

/// Pick the growth workflow pair whose module names match the workcell.
fn growth_workflows_for(spec: &WorkcellSpec) -> Result<(WorkflowSpec, WorkflowSpec), String> {
    let names: Vec<&str> = spec.modules.iter().map(|m| m.name.as_str()).collect();
    for candidate in [
        modcell::fixtures::growth_workflows_rpl(),
        modcell::fixtures::growth_workflows_bio(),
    ] {
        if candidate.0.modules.iter().all(|m| names.contains(&m.as_str())) {
            return Ok(candidate);
        }
    }
    Err("no bundled growth workflow matches this workcell's module names".to_string())
}

fn cmd_events(events: &EventsCommand) -> u8 {
    match events {
        EventsCommand::Tail { log, cursor, follow } => {
            let mut cursor = *cursor;
            loop {
                let batch = match read_events(log) {
                    Ok(events) => events,
                    Err(ReplayError::Io(e)) if *follow => {
                        eprintln!("waiting for `{}`: {e}", log.display());
                        std::thread::sleep(Duration::from_millis(200));
                        continue;
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        return EXIT_RUNTIME;
                    }
                };
                let after = cursor;
                for event in batch.iter().filter(|e| e.seq > after) {
                    println!("{}", serde_json::to_string(event).expect("event serializes"));
                    cursor = event.seq;
                }
                if !follow {
                    return EXIT_OK;
                }
                std::thread::sleep(Duration::from_millis(200));
            }
        }
        EventsCommand::Replay { log } => match read_events(log) {
            Ok(events) => {
                let runs = reconstruct_runs(&events);
                println!(
                    "{}",
                    serde_json::to_string_pretty(&json!({
                        "events": events.len(),
                        "runs": runs,
                    }))
                    .expect("summary serializes")
                );
                eprintln!("{} events, {} runs, sequence gap-free", events.len(), runs.len());
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_RUNTIME
            }
        },
    }
}
