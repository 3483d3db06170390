//! The adapter-independent request/response schema.
//!
//! Every adapter carries the same messages: a request `{op, params}` and a
//! response `{status, detail, data}`, with `op` one of the six interface
//! operation names. Adapters differ only in how the bytes move.

use serde_json::{json, Value};

use super::{ActionRequest, ActionVars, Node};

pub const OPS: [&str; 6] = ["about", "action", "reset", "resources", "state", "admin"];

pub fn request(op: &str, params: Value) -> Value {
    json!({ "op": op, "params": params })
}

fn ok(data: Value) -> Value {
    json!({ "status": "ok", "detail": "", "data": data })
}

fn error(detail: String) -> Value {
    json!({ "status": "error", "detail": detail, "data": null })
}

/// Execute one wire request against a node. Shared by every adapter's
/// server side, which keeps the observable behavior identical across
/// transports.
pub fn dispatch(node: &Node, op: &str, params: &Value) -> Value {
    match op {
        "about" => ok(serde_json::to_value(node.about()).unwrap()),
        "state" => ok(serde_json::to_value(node.state()).unwrap()),
        "reset" => ok(serde_json::to_value(node.reset()).unwrap()),
        "resources" => ok(serde_json::to_value(node.resources()).unwrap()),
        "action" => match serde_json::from_value::<ActionRequest>(params.clone()) {
            Ok(request) => ok(serde_json::to_value(node.action(&request)).unwrap()),
            Err(e) => error(format!("malformed action request: {e}")),
        },
        "admin" => {
            let command = params.get("command").and_then(Value::as_str).unwrap_or_default();
            if command.is_empty() {
                return error("malformed admin request: missing `command`".to_string());
            }
            let args: ActionVars = params
                .get("args")
                .cloned()
                .map(|v| serde_json::from_value(v).unwrap_or_default())
                .unwrap_or_default();
            ok(serde_json::to_value(node.admin(command, &args)).unwrap())
        }
        other => error(format!("unknown op `{other}`")),
    }
}

/// Execute a raw `{op, params}` message against a node.
pub fn dispatch_message(node: &Node, message: &Value) -> Value {
    let op = message.get("op").and_then(Value::as_str).unwrap_or_default();
    let params = message.get("params").cloned().unwrap_or(Value::Null);
    dispatch(node, op, &params)
}
