//! Offline chat-completion endpoint for tests and credential-free runs.
//!
//! The deterministic behavior "decodes" a prompt without a model: it takes the
//! text after `Compressed context:`, returns it unchanged if it already is an
//! atoms object, parses it with the matching symbolic grammar if it starts
//! with a known header (falling back to szip_ascii; a leading `@DICT`
//! line supplies dictionary codes), and otherwise answers with an empty atom
//! list.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde_json::{json, Value as Json};

use crate::case::Regime;
use crate::codec::{parse_dictionary, prose::render_structured, Codec};

pub const STUB_MODEL: &str = "semzip-stub-decoder";

#[derive(Debug, Clone)]
pub enum StubBehavior {
    /// Grammar-based decoding of the prompt's payload.
    Deterministic,
    /// Every request gets this status and assistant content.
    Fixed { status: u16, content: String },
    /// The n-th request gets the n-th `(status, raw body)`; the last repeats.
    Script(Vec<(u16, String)>),
}

pub struct StubServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    hits: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(behavior: StubBehavior) -> std::io::Result<StubServer> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let hits = Arc::new(AtomicUsize::new(0));
        let behavior = Arc::new(Mutex::new(behavior));
        let handle = {
            let stop = stop.clone();
            let hits = hits.clone();
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let n = hits.fetch_add(1, Ordering::SeqCst);
                    let behavior = behavior.clone();
                    thread::spawn(move || {
                        let _ = serve(stream, n, &behavior);
                    });
                }
            })
        };
        Ok(StubServer {
            addr,
            stop,
            hits,
            handle: Some(handle),
        })
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Requests received so far.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, n: usize, behavior: &Mutex<StubBehavior>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some((k, v)) = trimmed.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    let prompt = serde_json::from_slice::<Json>(&body)
        .ok()
        .and_then(|j| j.pointer("/messages/0/content").and_then(Json::as_str).map(str::to_string))
        .unwrap_or_default();

    let behavior = behavior.lock().expect("stub behavior lock").clone();
    let (status, response) = match behavior {
        StubBehavior::Deterministic => (200, completion(&decode_prompt(&prompt))),
        StubBehavior::Fixed { status, content } => (status, completion(&content)),
        StubBehavior::Script(steps) => match steps.get(n).or(steps.last()) {
            Some((status, raw)) => (*status, raw.clone()),
            None => (500, String::new()),
        },
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response}",
        reason(status),
        response.len()
    )?;
    out.flush()
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        401 => "Unauthorized",
        403 => "Forbidden",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

/// A chat-completion response body carrying `content`.
pub fn completion(content: &str) -> String {
    json!({
        "id": "stub",
        "object": "chat.completion",
        "model": STUB_MODEL,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
    })
    .to_string()
}

/// The deterministic stub's answer to a prompt.
pub fn decode_prompt(prompt: &str) -> String {
    let payload = prompt
        .rsplit_once("Compressed context:")
        .map(|(_, p)| p.trim())
        .unwrap_or("");
    if let Ok(Json::Object(map)) = serde_json::from_str::<Json>(payload) {
        if map.contains_key("atoms") {
            return payload.to_string();
        }
    }
    // an optional leading `@DICT/...` line defines codes for the rest
    let (dict, payload) = match payload.split_once('\n') {
        Some((first, rest)) if first.starts_with("@DICT/") => match parse_dictionary(first) {
            Ok(d) => (Some(d), rest.trim()),
            Err(_) => return r#"{"atoms":[]}"#.to_string(),
        },
        _ => (None, payload),
    };
    let codec = Codec::builtin();
    let regime = if payload.starts_with("@CCL/1") {
        Regime::CclCore
    } else if payload.starts_with("@C1") {
        Regime::CclMin
    } else {
        Regime::SzipAscii
    };
    match codec.parse_symbolic(payload, regime, dict.as_ref()) {
        Ok(atoms) => render_structured(&atoms),
        Err(_) => r#"{"atoms":[]}"#.to_string(),
    }
}
