//! Minimal in-process HTTP/1.1 server for exercising the wire clients
//! without a network. Each connection carries one request; every request is
//! recorded for later inspection.

use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::json;
use wakeprobe_core::field::FlowSnapshot;

use crate::remote::{GenerateRequest, GenerateResponse};

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl RecordedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or(serde_json::Value::Null)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubResponse {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl StubResponse {
    pub fn json(status: u16, body: &serde_json::Value) -> Self {
        Self { status, body: body.to_string(), delay: Duration::ZERO }
    }

    pub fn raw(status: u16, body: impl Into<String>) -> Self {
        Self { status, body: body.into(), delay: Duration::ZERO }
    }
}

pub type Handler = Box<dyn FnMut(&RecordedRequest) -> StubResponse + Send>;

pub struct StubServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(handler: impl FnMut(&RecordedRequest) -> StubResponse + Send + 'static) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (log, flag) = (requests.clone(), stop.clone());
        let mut handler: Handler = Box::new(handler);
        let thread = thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                // a broken client connection only affects that exchange
                let _ = serve_one(stream, &mut handler, &log);
            }
        });
        Ok(Self { addr, requests, stop, thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().expect("request log poisoned").clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve_one(stream: TcpStream, handler: &mut Handler, log: &Mutex<Vec<RecordedRequest>>) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(());
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    let mut content_length = 0usize;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let h = line.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let req = RecordedRequest { method, path, headers, body: String::from_utf8_lossy(&body).into_owned() };
    log.lock().expect("request log poisoned").push(req.clone());
    let resp = handler(&req);
    if !resp.delay.is_zero() {
        thread::sleep(resp.delay);
    }
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        resp.status,
        reason(resp.status),
        resp.body.len()
    )?;
    out.write_all(resp.body.as_bytes())?;
    out.flush()
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        422 => "Unprocessable Entity",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

/// Flow-generator handler: `frames(request)` supplies the snapshots, which
/// are encoded per the wire contract.
pub fn surrogate_handler(
    mut frames: impl FnMut(&GenerateRequest) -> Result<Vec<FlowSnapshot>, StubResponse> + Send + 'static,
) -> impl FnMut(&RecordedRequest) -> StubResponse + Send + 'static {
    move |req| {
        if req.method != "POST" || req.path != "/v1/generate" {
            return StubResponse::json(404, &json!({"error": "not found"}));
        }
        let Ok(gen) = serde_json::from_str::<GenerateRequest>(&req.body) else {
            return StubResponse::json(400, &json!({"error": "malformed request"}));
        };
        match frames(&gen) {
            Ok(snaps) if !snaps.is_empty() => {
                let resp = GenerateResponse::from_snapshots(&snaps[0].grid, &snaps);
                StubResponse::json(200, &serde_json::to_value(resp).expect("response serializes"))
            }
            Ok(_) => StubResponse::json(500, &json!({"error": "no frames"})),
            Err(r) => r,
        }
    }
}

/// Chat-completions handler replaying `replies` in order; the last one
/// repeats once the queue runs dry.
pub fn chat_handler(replies: Vec<String>) -> impl FnMut(&RecordedRequest) -> StubResponse + Send + 'static {
    let mut queue: VecDeque<String> = replies.into();
    let mut last = String::new();
    move |req| {
        if req.method != "POST" || !req.path.ends_with("/chat/completions") {
            return StubResponse::json(404, &json!({"error": "not found"}));
        }
        if let Some(next) = queue.pop_front() {
            last = next;
        }
        StubResponse::json(200, &chat_completion(&last))
    }
}

pub fn chat_completion(content: &str) -> serde_json::Value {
    json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
}
