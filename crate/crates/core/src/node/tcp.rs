//! Framed TCP adapter.
//!
//! Messages are length-prefixed frames: a 4-byte big-endian payload length
//! followed by a UTF-8 JSON payload. Requests carry `{op, params}` and
//! responses `{status, detail, data}`.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;

use super::client::{ClientError, ModuleClient, Transport};
use super::{wire, Node};

pub const MAX_FRAME_BYTES: u32 = 16 * 1024 * 1024;

/// Write one length-prefixed JSON frame.
pub fn write_frame(stream: &mut impl Write, message: &Value) -> std::io::Result<()> {
    let payload = serde_json::to_vec(message)?;
    let len = payload.len() as u32;
    stream.write_all(&len.to_be_bytes())?;
    stream.write_all(&payload)?;
    stream.flush()
}

/// Read one length-prefixed JSON frame. Returns `None` on clean EOF.
pub fn read_frame(stream: &mut impl Read) -> std::io::Result<Option<Value>> {
    let mut len_bytes = [0u8; 4];
    match stream.read_exact(&mut len_bytes) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len_bytes);
    if len > MAX_FRAME_BYTES {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit"),
        ));
    }
    let mut payload = vec![0u8; len as usize];
    stream.read_exact(&mut payload)?;
    let message = serde_json::from_slice(&payload)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    Ok(Some(message))
}

/// A running TCP node server. Dropping the handle stops the accept loop.
pub struct TcpServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
}

impl TcpServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }
}

/// Serve a node over framed TCP. Bind to port 0 for an ephemeral port.
pub fn serve(node: Arc<Node>, bind: &str) -> std::io::Result<TcpServer> {
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&shutdown);
    std::thread::spawn(move || loop {
        if flag.load(Ordering::SeqCst) {
            break;
        }
        match listener.accept() {
            Ok((stream, _)) => {
                let node = Arc::clone(&node);
                std::thread::spawn(move || handle_connection(stream, node));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(_) => break,
        }
    });
    Ok(TcpServer { addr, shutdown })
}

fn handle_connection(mut stream: TcpStream, node: Arc<Node>) {
    stream.set_nonblocking(false).ok();
    while let Ok(Some(message)) = read_frame(&mut stream) {
        let response = wire::dispatch_message(&node, &message);
        if write_frame(&mut stream, &response).is_err() {
            break;
        }
    }
}

struct TcpTransport {
    addr: String,
}

impl Transport for TcpTransport {
    fn roundtrip(&self, op: &str, params: Value, timeout: Duration) -> Result<Value, ClientError> {
        let addr = self
            .addr
            .to_socket_addrs()
            .map_err(|e| ClientError::Transport(e.to_string()))?
            .next()
            .ok_or_else(|| ClientError::Transport(format!("cannot resolve {}", self.addr)))?;
        let mut stream = TcpStream::connect_timeout(&addr, timeout.min(Duration::from_secs(5)))
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        stream
            .set_read_timeout(Some(timeout))
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        write_frame(&mut stream, &wire::request(op, params))
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        match read_frame(&mut stream) {
            Ok(Some(response)) => Ok(response),
            Ok(None) => Err(ClientError::Transport("connection closed".to_string())),
            Err(e) => Err(ClientError::Transport(e.to_string())),
        }
    }
}

/// Client for a node served over framed TCP.
pub fn client(addr: &str) -> ModuleClient {
    ModuleClient::new(Box::new(TcpTransport {
        addr: addr.to_string(),
    }))
}
