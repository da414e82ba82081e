//! Minimal blocking HTTP/1.1 plumbing for the JSON wire protocols.
//!
//! [`HttpServer`] hosts a handler on a loopback port. It backs the built-in
//! mock services (a pure scorer behind `POST /score`, the mock summarizer
//! behind `POST /summarize`) and records every request it receives so
//! clients can be checked against golden request bodies.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use crate::scorers::ConsistencyScorer;
use crate::summeval::{mock_summary_from_prompt, SummarizeRequest};

/// One request as seen by the server.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub content_type: Option<String>,
    pub body: String,
}

/// Handler response: HTTP status and body (sent as `application/json`).
pub type Reply = (u16, String);

type Handler = dyn Fn(&RecordedRequest) -> Reply + Send + Sync;

pub struct HttpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    log: Arc<Mutex<Vec<RecordedRequest>>>,
    thread: Option<JoinHandle<()>>,
}

impl HttpServer {
    /// Binds `127.0.0.1:0` and serves each connection on its own thread.
    pub fn spawn<F>(handler: F) -> std::io::Result<Self>
    where
        F: Fn(&RecordedRequest) -> Reply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let (stop2, log2) = (stop.clone(), log.clone());
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (handler, log) = (handler.clone(), log2.clone());
                std::thread::spawn(move || {
                    let _ = serve_connection(stream, &*handler, &log);
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            log,
            thread: Some(thread),
        })
    }

    /// Serves a pure scorer over `POST /score`.
    pub fn scorer<S: ConsistencyScorer + 'static>(scorer: S) -> std::io::Result<Self> {
        Self::spawn(move |req| {
            if req.method != "POST" || req.path != "/score" {
                return (404, json!({"error": "not found"}).to_string());
            }
            let parsed: Result<Value, _> = serde_json::from_str(&req.body);
            let fields = parsed.ok().and_then(|v| {
                Some((
                    v.get("hypothesis")?.as_str()?.to_string(),
                    v.get("reference")?.as_str()?.to_string(),
                ))
            });
            match fields {
                Some((h, r)) => match scorer.score(&h, &r) {
                    Ok(s) => (200, json!({ "consistency": s }).to_string()),
                    Err(e) => (500, json!({ "error": e.to_string() }).to_string()),
                },
                None => (400, json!({"error": "expected hypothesis and reference"}).to_string()),
            }
        })
    }

    /// Serves the lead-per-speaker mock summarizer over `POST /summarize`.
    pub fn mock_summarizer() -> std::io::Result<Self> {
        Self::spawn(|req| {
            if req.method != "POST" || req.path != "/summarize" {
                return (404, json!({"error": "not found"}).to_string());
            }
            match serde_json::from_str::<SummarizeRequest>(&req.body) {
                Ok(r) => (
                    200,
                    json!({ "summary": mock_summary_from_prompt(&r.prompt) }).to_string(),
                ),
                Err(e) => (400, json!({ "error": e.to_string() }).to_string()),
            }
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL such as `http://127.0.0.1:41234`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far, in arrival order.
    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().expect("request log").clone()
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve_connection(
    stream: TcpStream,
    handler: &Handler,
    log: &Mutex<Vec<RecordedRequest>>,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut content_length = 0usize;
    let mut content_type = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            } else if k.trim().eq_ignore_ascii_case("content-type") {
                content_type = Some(v.trim().to_string());
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let req = RecordedRequest {
        method,
        path,
        content_type,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    log.lock().expect("request log").push(req.clone());
    let (status, body) = handler(&req);
    write_response(stream, status, &body)
}

/// Writes a complete `Connection: close` JSON response.
pub fn write_response(mut stream: TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

/// Joins a base URL and a route, accepting URLs that already end in it.
pub(crate) fn route(endpoint: &str, path: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with(path) {
        base.to_string()
    } else {
        format!("{base}{path}")
    }
}

/// Applies `f` to every item with at most `cap` calls running at once.
/// Output `k` always belongs to item `k`.
pub(crate) fn bounded_map<T, R, F>(items: &[T], cap: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let workers = cap.max(1).min(items.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(k) else { break };
                let r = f(item);
                slots.lock().expect("result slots")[k] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// Outcome classes shared by the scorer and summarizer clients.
#[derive(Debug)]
pub(crate) enum PostError {
    Network(String),
    Timeout,
    Status(u16),
    Malformed(String),
}

/// POSTs a JSON body and parses a JSON reply.
pub(crate) fn post_json(url: &str, body: &Value, timeout: Duration) -> Result<Value, PostError> {
    let agent = ureq::AgentBuilder::new().timeout(timeout).build();
    match agent.post(url).send_json(body) {
        Ok(resp) => {
            let text = resp
                .into_string()
                .map_err(|e| classify_io(&e).unwrap_or_else(|| PostError::Malformed(e.to_string())))?;
            serde_json::from_str(&text).map_err(|e| PostError::Malformed(e.to_string()))
        }
        Err(ureq::Error::Status(code, _)) => Err(PostError::Status(code)),
        Err(ureq::Error::Transport(t)) => {
            let timed_out = t.to_string().contains("timed out")
                || std::error::Error::source(&t)
                    .and_then(|s| s.downcast_ref::<std::io::Error>())
                    .is_some_and(|e| is_timeout(e.kind()));
            if timed_out {
                Err(PostError::Timeout)
            } else {
                Err(PostError::Network(t.to_string()))
            }
        }
    }
}

fn is_timeout(kind: std::io::ErrorKind) -> bool {
    matches!(
        kind,
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
    )
}

fn classify_io(e: &std::io::Error) -> Option<PostError> {
    is_timeout(e.kind()).then_some(PostError::Timeout)
}
