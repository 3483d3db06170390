//! REST adapter.
//!
//! Routes: `POST /action` (body `{"action_handle": ..., "action_vars": {...}}`),
//! `GET /state`, `GET /about`, `GET /resources`, `POST /reset`,
//! `POST /admin` (body `{"command": ..., "args": {...}}`). Responses carry
//! the operation's payload directly, e.g. `GET /state` returns
//! `{"state": "IDLE"}`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use tiny_http::{Header, Method, Response, Server};

use super::client::{ClientError, ModuleClient, Transport};
use super::{wire, Node};

/// A running REST node server. Dropping the handle stops the accept loop.
pub struct RestServer {
    addr: SocketAddr,
    server: Arc<Server>,
}

impl RestServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for RestServer {
    fn drop(&mut self) {
        self.server.unblock();
    }
}

/// Serve a node over HTTP. Bind to port 0 for an ephemeral port.
pub fn serve(node: Arc<Node>, bind: &str) -> std::io::Result<RestServer> {
    let server = Arc::new(
        Server::http(bind).map_err(|e| std::io::Error::new(std::io::ErrorKind::AddrInUse, e))?,
    );
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::Other, "no ip addr"))?;
    let accept = Arc::clone(&server);
    std::thread::spawn(move || {
        while let Ok(request) = accept.recv() {
            let node = Arc::clone(&node);
            // Long actions must not block state queries: one thread per request.
            std::thread::spawn(move || handle_request(request, node));
        }
    });
    Ok(RestServer { addr, server })
}

fn handle_request(mut request: tiny_http::Request, node: Arc<Node>) {
    let mut body = String::new();
    let _ = request.as_reader().read_to_string(&mut body);
    let (status, payload) = route(&node, request.method(), request.url(), &body);
    let header = Header::from_bytes("Content-Type", "application/json").unwrap();
    let response = Response::from_string(payload.to_string())
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(response);
}

fn route(node: &Node, method: &Method, url: &str, body: &str) -> (u16, Value) {
    let path = url.split('?').next().unwrap_or(url);
    let op = match (method, path) {
        (Method::Get, "/about") => "about",
        (Method::Get, "/state") => "state",
        (Method::Get, "/resources") => "resources",
        (Method::Post, "/reset") => "reset",
        (Method::Post, "/action") => "action",
        (Method::Post, "/admin") => "admin",
        _ => {
            return (
                404,
                serde_json::json!({ "error": format!("no route {method} {path}") }),
            )
        }
    };
    let params = if body.trim().is_empty() {
        Value::Null
    } else {
        match serde_json::from_str::<Value>(body) {
            Ok(value) => {
                // Tolerate a `params`-wrapped body as well as the bare form.
                value.get("params").cloned().unwrap_or(value)
            }
            Err(e) => {
                return (
                    400,
                    serde_json::json!({ "error": format!("malformed JSON body: {e}") }),
                )
            }
        }
    };
    let response = wire::dispatch(node, op, &params);
    if response.get("status").and_then(Value::as_str) == Some("ok") {
        (200, response.get("data").cloned().unwrap_or(Value::Null))
    } else {
        let detail = response
            .get("detail")
            .and_then(Value::as_str)
            .unwrap_or("unspecified")
            .to_string();
        (400, serde_json::json!({ "error": detail }))
    }
}

struct RestTransport {
    base_url: String,
}

impl Transport for RestTransport {
    fn roundtrip(&self, op: &str, params: Value, timeout: Duration) -> Result<Value, ClientError> {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout(timeout)
            .build();
        let (method, path) = match op {
            "about" => ("GET", "/about"),
            "state" => ("GET", "/state"),
            "resources" => ("GET", "/resources"),
            "reset" => ("POST", "/reset"),
            "action" => ("POST", "/action"),
            "admin" => ("POST", "/admin"),
            other => return Err(ClientError::Protocol(format!("unknown op `{other}`"))),
        };
        let url = format!("{}{}", self.base_url, path);
        let call = match method {
            "GET" => agent.get(&url).call(),
            _ => {
                if params.is_null() {
                    agent.post(&url).call()
                } else {
                    agent.post(&url).send_string(&params.to_string())
                }
            }
        };
        match call {
            Ok(response) => {
                let body = response
                    .into_string()
                    .map_err(|e| ClientError::Transport(e.to_string()))?;
                let data: Value = serde_json::from_str(&body)
                    .map_err(|e| ClientError::Protocol(e.to_string()))?;
                Ok(serde_json::json!({ "status": "ok", "detail": "", "data": data }))
            }
            Err(ureq::Error::Status(code, response)) => {
                let body = response.into_string().unwrap_or_default();
                let detail = serde_json::from_str::<Value>(&body)
                    .ok()
                    .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
                    .unwrap_or(body);
                Ok(serde_json::json!({
                    "status": "error",
                    "detail": format!("http {code}: {detail}"),
                    "data": null,
                }))
            }
            Err(e) => Err(ClientError::Transport(e.to_string())),
        }
    }
}

/// Client for a node served over REST.
pub fn client(base_url: &str) -> ModuleClient {
    ModuleClient::new(Box::new(RestTransport {
        base_url: base_url.trim_end_matches('/').to_string(),
    }))
}
