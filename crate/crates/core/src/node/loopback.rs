//! In-process adapter: same message schema, no sockets.

use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;

use super::client::{ClientError, ModuleClient, Transport};
use super::{wire, Node};

struct LoopbackTransport {
    node: Arc<Node>,
}

impl Transport for LoopbackTransport {
    fn roundtrip(&self, op: &str, params: Value, _timeout: Duration) -> Result<Value, ClientError> {
        // Round-trips through the exact wire message encoding so loopback
        // exercises the same schema as the socket adapters.
        let message = wire::request(op, params);
        Ok(wire::dispatch_message(&self.node, &message))
    }
}

/// Client for a node living in the same process.
pub fn client(node: Arc<Node>) -> ModuleClient {
    ModuleClient::new(Box::new(LoopbackTransport { node }))
}
