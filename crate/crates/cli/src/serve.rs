//! `modcell serve`: host a simulated workcell behind a REST control API.
//!
//! Routes (JSON in, JSON out):
//! - `GET  /health`            module liveness map
//! - `GET  /workcell`          world snapshot
//! - `POST /runs`              `{workflow, payload?, experiment_id?}` -> `{run_id}`
//! - `GET  /runs`              all run records
//! - `GET  /runs/<id>`         one run record
//! - `POST /runs/<id>/cancel`  `{cancelled}`
//!
//! `POST /runs` takes the workflow *document text*, not a parsed object, so
//! remote callers submit exactly the file they validated.

use std::path::PathBuf;

use indexmap::IndexMap;
use serde_json::{json, Value};
use tiny_http::{Header, Method, Response, Server};

use modcell::exec::SubmitError;
use modcell::specs::parse_workflow;

use crate::{build_stack, usage_error, SimFlags, EXIT_RUNTIME};

pub fn cmd_serve(workcell: &str, sim: &SimFlags, api_port: u16, store: Option<PathBuf>) -> u8 {
    let (cell, executor) = match build_stack(workcell, sim, store) {
        Ok(stack) => stack,
        Err(e) => return usage_error(&e),
    };
    let server = match Server::http(("127.0.0.1", api_port)) {
        Ok(server) => server,
        Err(e) => {
            eprintln!("error: cannot bind control API: {e}");
            return EXIT_RUNTIME;
        }
    };
    let address = format!("http://{}", server.server_addr());
    let modules: IndexMap<String, String> = cell
        .module_names()
        .into_iter()
        .map(|name| {
            let adapter = cell
                .adapter(&name)
                .map(|kind| format!("{kind:?}").to_lowercase())
                .unwrap_or_default();
            (name, adapter)
        })
        .collect();
    // One machine-readable line on stdout so scripts can discover the API.
    println!(
        "{}",
        json!({ "api": address, "workcell": cell.spec.name, "modules": modules })
    );
    eprintln!("serving `{}` at {address}; interrupt to stop", cell.spec.name);

    for mut request in server.incoming_requests() {
        let method = request.method().clone();
        let url = request.url().to_string();
        let path: Vec<&str> = url.trim_matches('/').split('/').collect();
        let mut body = String::new();
        let _ = request.as_reader().read_to_string(&mut body);

        let (status, payload) = handle(&executor, &cell, &method, &path, &body);
        let response = Response::from_string(payload.to_string())
            .with_status_code(status)
            .with_header(
                Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                    .expect("static header"),
            );
        let _ = request.respond(response);
    }
    executor.shutdown();
    0
}

fn handle(
    executor: &modcell::exec::Executor,
    cell: &modcell::sim::SimWorkcell,
    method: &Method,
    path: &[&str],
    body: &str,
) -> (u16, Value) {
    match (method, path) {
        (Method::Get, ["health"]) => {
            let pings = executor.ping_all();
            let all = pings.values().all(|&ok| ok);
            (if all { 200 } else { 503 }, json!({ "ok": all, "modules": pings }))
        }
        (Method::Get, ["workcell"]) => (200, cell.snapshot()),
        (Method::Post, ["runs"]) => submit(executor, body),
        (Method::Get, ["runs"]) => (
            200,
            serde_json::to_value(executor.list_runs(None)).expect("records serialize"),
        ),
        (Method::Get, ["runs", id]) => match executor.get_run(id) {
            Some(record) => (200, serde_json::to_value(record).expect("record serializes")),
            None => (404, json!({ "error": format!("no run `{id}`") })),
        },
        (Method::Post, ["runs", id, "cancel"]) => {
            (200, json!({ "cancelled": executor.cancel_run(id) }))
        }
        _ => (404, json!({ "error": "no such route" })),
    }
}

fn submit(executor: &modcell::exec::Executor, body: &str) -> (u16, Value) {
    let request: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => return (422, json!({ "error": format!("bad JSON body: {e}") })),
    };
    let Some(workflow_text) = request.get("workflow").and_then(Value::as_str) else {
        return (422, json!({ "error": "body needs a `workflow` document string" }));
    };
    let workflow = match parse_workflow(workflow_text) {
        Ok(wf) => wf,
        Err(e) => return (422, json!({ "error": format!("workflow does not parse: {e}") })),
    };
    let payload: IndexMap<String, Value> = request
        .get("payload")
        .and_then(Value::as_object)
        .map(|map| map.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
        .unwrap_or_default();
    let experiment_id = request
        .get("experiment_id")
        .and_then(Value::as_str)
        .unwrap_or("remote");
    match executor.submit_run(&workflow, payload, experiment_id) {
        Ok(run_id) => (200, json!({ "run_id": run_id })),
        Err(SubmitError::ValidationFailed(report)) => (
            400,
            json!({ "ok": false, "findings": report.findings }),
        ),
        Err(SubmitError::Io(e)) => (500, json!({ "error": format!("store failure: {e}") })),
    }
}
