//! Minimal completions-API mock on a plain TCP listener.
//!
//! Hand-rolled HTTP/1.1 handling keeps the test surface dependency-free and
//! fully deterministic: one request, one canned JSON response, connection
//! closed. A shared counter exposes how many requests actually hit the
//! wire, which the caching tests assert on.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub enum MockBehavior {
    /// Judge: both tokens get the same log-probability → score 0.5.
    EqualLogprobs,
    /// Judge: log-probabilities derived from a stable hash of the prompt,
    /// so every worker count sees identical scores per question.
    DeterministicPerPrompt,
    /// Judge: difficulty grows with prompt length — a crude but monotone
    /// stand-in for a competent judge.
    HeuristicDifficulty,
    /// Judge: the positive token is missing from top_logprobs, forcing the
    /// client's flooring path.
    MissingPositiveToken,
    /// Always responds with this HTTP status and an empty body.
    FailAll { status: u16 },
    /// First `n` requests fail with 500, then behave deterministically.
    FailFirstN { n: usize },
    /// Completions: returns these texts as choices (cycled to the requested
    /// `n`), for solve-rate tests.
    FixedSolutions { texts: Vec<String> },
}

pub struct MockEndpoint {
    addr: String,
    requests: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockEndpoint {
    pub fn start(behavior: MockBehavior) -> MockEndpoint {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock endpoint");
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicBool::new(false));

        let requests_bg = requests.clone();
        let shutdown_bg = shutdown.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if shutdown_bg.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let behavior = behavior.clone();
                let requests = requests_bg.clone();
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, &behavior, &requests);
                });
            }
        });

        MockEndpoint {
            addr,
            requests,
            shutdown,
            handle: Some(handle),
        }
    }

    /// Endpoint URL to point clients at.
    pub fn url(&self) -> String {
        self.addr.clone()
    }

    /// Requests that reached the listener so far.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockEndpoint {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // poke the accept loop so it observes the flag
        if let Some(addr) = self.addr.strip_prefix("http://") {
            let _ = TcpStream::connect(addr);
        }
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    mut stream: TcpStream,
    behavior: &MockBehavior,
    requests: &AtomicUsize,
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end;
    loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Ok(()); // shutdown poke or client went away
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_header_end(&buf) {
            header_end = pos;
            break;
        }
        if buf.len() > 1 << 20 {
            return Ok(());
        }
    }
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            if name.eq_ignore_ascii_case("content-length") {
                value.trim().parse::<usize>().ok()
            } else {
                None
            }
        })
        .unwrap_or(0);
    let body_start = header_end + 4;
    while buf.len() < body_start + content_length {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    let body: Value =
        serde_json::from_slice(&buf[body_start..body_start + content_length.min(buf.len() - body_start)])
            .unwrap_or(Value::Null);

    let request_index = requests.fetch_add(1, Ordering::SeqCst);
    let (status, response_body) = respond(behavior, &body, request_index);
    let payload = response_body.to_string();
    let response = format!(
        "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        status_text(status),
        payload.len(),
    );
    stream.write_all(response.as_bytes())?;
    stream.flush()?;
    Ok(())
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn status_text(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Mock",
    }
}

fn respond(behavior: &MockBehavior, body: &Value, request_index: usize) -> (u16, Value) {
    let prompt = body
        .get("prompt")
        .and_then(|p| p.as_str())
        .unwrap_or("")
        .to_string();
    let n = body.get("n").and_then(|v| v.as_u64()).unwrap_or(1) as usize;
    match behavior {
        MockBehavior::EqualLogprobs => {
            let lp = -(2f64.ln());
            (200, judge_response("1", &[("1", lp), ("0", lp)]))
        }
        MockBehavior::DeterministicPerPrompt => (200, deterministic_judge(&prompt)),
        MockBehavior::HeuristicDifficulty => {
            let len = prompt.chars().count().min(400) as f64;
            let p1 = (0.05 + 0.9 * len / 400.0).clamp(0.01, 0.99);
            let lp1 = p1.ln();
            let lp0 = (1.0 - p1).ln();
            (200, judge_response(if p1 >= 0.5 { "1" } else { "0" }, &[("1", lp1), ("0", lp0)]))
        }
        MockBehavior::MissingPositiveToken => {
            (200, judge_response("0", &[("0", -0.1), ("the", -3.0)]))
        }
        MockBehavior::FailAll { status } => (*status, json!({"error": "mock failure"})),
        MockBehavior::FailFirstN { n: fail_n } => {
            if request_index < *fail_n {
                (500, json!({"error": "mock transient failure"}))
            } else {
                (200, deterministic_judge(&prompt))
            }
        }
        MockBehavior::FixedSolutions { texts } => {
            let choices: Vec<Value> = (0..n)
                .map(|i| json!({"text": texts[i % texts.len()], "index": i}))
                .collect();
            (200, json!({"choices": choices}))
        }
    }
}

fn deterministic_judge(prompt: &str) -> Value {
    let mut hasher = DefaultHasher::new();
    prompt.hash(&mut hasher);
    let h = hasher.finish();
    // map to p1 in [0.05, 0.95]
    let p1 = 0.05 + 0.90 * ((h % 10_000) as f64 / 10_000.0);
    let lp1 = p1.ln();
    let lp0 = (1.0 - p1).ln();
    judge_response(if p1 >= 0.5 { "1" } else { "0" }, &[("1", lp1), ("0", lp0)])
}

fn judge_response(text: &str, top: &[(&str, f64)]) -> Value {
    let mut map = serde_json::Map::new();
    for (token, lp) in top {
        map.insert(token.to_string(), json!(lp));
    }
    json!({
        "choices": [{
            "text": text,
            "index": 0,
            "logprobs": {
                "tokens": [text],
                "token_logprobs": [top.first().map(|t| t.1).unwrap_or(0.0)],
                "top_logprobs": [Value::Object(map)]
            }
        }]
    })
}
