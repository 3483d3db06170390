//! Client side of the module interface, generic over transports.

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::{AboutInfo, ActionRequest, ActionResult, ActionVars, ModuleState, ResourceLevels};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Moves one `{op, params}` request to a node and returns the response.
pub trait Transport: Send + Sync {
    fn roundtrip(&self, op: &str, params: Value, timeout: Duration)
        -> Result<Value, ClientError>;
}

/// Default client-side timeout for a blocking `action` call.
pub const DEFAULT_ACTION_TIMEOUT: Duration = Duration::from_secs(300);
const QUERY_TIMEOUT: Duration = Duration::from_secs(10);
const PING_TIMEOUT: Duration = Duration::from_secs(2);

/// A caller handle for one module node, usable over any adapter.
pub struct ModuleClient {
    transport: Box<dyn Transport>,
    action_timeout: Duration,
}

impl ModuleClient {
    pub fn new(transport: Box<dyn Transport>) -> ModuleClient {
        ModuleClient {
            transport,
            action_timeout: DEFAULT_ACTION_TIMEOUT,
        }
    }

    pub fn with_action_timeout(mut self, timeout: Duration) -> ModuleClient {
        self.action_timeout = timeout;
        self
    }

    pub fn about(&self) -> Result<AboutInfo, ClientError> {
        self.call("about", Value::Null, QUERY_TIMEOUT)
    }

    pub fn state(&self) -> Result<ModuleState, ClientError> {
        self.call("state", Value::Null, QUERY_TIMEOUT)
    }

    pub fn reset(&self) -> Result<ModuleState, ClientError> {
        self.call("reset", Value::Null, QUERY_TIMEOUT)
    }

    pub fn resources(&self) -> Result<ResourceLevels, ClientError> {
        self.call("resources", Value::Null, QUERY_TIMEOUT)
    }

    pub fn action(&self, request: &ActionRequest) -> Result<ActionResult, ClientError> {
        let params = serde_json::to_value(request)
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        self.call("action", params, self.action_timeout)
    }

    pub fn admin(&self, command: &str, args: &ActionVars) -> Result<ActionResult, ClientError> {
        self.call("admin", json!({ "command": command, "args": args }), self.action_timeout)
    }

    /// True if the node answers a state query within the ping timeout.
    pub fn ping(&self) -> bool {
        self.transport
            .roundtrip("state", Value::Null, PING_TIMEOUT)
            .is_ok()
    }

    fn call<T: serde::de::DeserializeOwned>(
        &self,
        op: &str,
        params: Value,
        timeout: Duration,
    ) -> Result<T, ClientError> {
        let response = self.transport.roundtrip(op, params, timeout)?;
        let status = response.get("status").and_then(Value::as_str).unwrap_or_default();
        if status != "ok" {
            let detail = response
                .get("detail")
                .and_then(Value::as_str)
                .unwrap_or("unspecified");
            return Err(ClientError::Protocol(format!("node error on `{op}`: {detail}")));
        }
        let data = response.get("data").cloned().unwrap_or(Value::Null);
        serde_json::from_value(data).map_err(|e| ClientError::Protocol(e.to_string()))
    }
}
