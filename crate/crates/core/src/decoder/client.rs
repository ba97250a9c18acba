//! Blocking chat-completion client with bounded retries, and the batch driver.
//!
//! Provider field names (`messages`, `max_tokens`, `choices[0].message.content`)
//! live only in [`ChatClient::request_body`] and [`extract_content`].

use std::path::Path;
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde_json::{json, Value as Json};

use super::{parse_decoder_output, DecodeRecord, DecoderConfig, DecoderError, PromptRecord};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Status {
        status: u16,
        body: String,
        retry_after: Option<u64>,
    },
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("could not read response body: {0}")]
    Body(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Timeout | TransportError::Connect(_) => true,
            TransportError::Body(_) => false,
        }
    }

    fn is_auth(&self) -> bool {
        matches!(self, TransportError::Status { status: 401 | 403, .. })
    }
}

/// Content of a successful completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    /// The assistant message, or the whole body when it is not a completion object.
    pub content: String,
    /// Model identifier echoed by the provider.
    pub model: Option<String>,
}

pub struct ChatClient {
    http: reqwest::blocking::Client,
    config: DecoderConfig,
    api_key: Option<String>,
}

impl ChatClient {
    pub fn new(config: DecoderConfig) -> Result<ChatClient, DecoderError> {
        let api_key = config.api_key()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| DecoderError::Http(e.to_string()))?;
        Ok(ChatClient { http, config, api_key })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    fn request_body(&self, prompt: &str) -> Json {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "max_tokens": self.config.max_output_tokens,
        })
    }

    /// One HTTP exchange, no retries.
    pub fn send_once(&self, prompt: &str) -> Result<ChatResponse, TransportError> {
        let mut request = self.http.post(&self.config.endpoint).json(&self.request_body(prompt));
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse().ok());
        let body = response.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Body(e.to_string())
            }
        })?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, body, retry_after });
        }
        Ok(extract_content(body))
    }

    /// Sends with retries; returns the final outcome and the attempt count.
    pub fn send(&self, prompt: &str) -> (Result<ChatResponse, TransportError>, u32) {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = self.send_once(prompt);
            match &result {
                Err(e) if e.retryable() && attempt < self.config.max_attempts => {
                    thread::sleep(self.backoff(attempt, e));
                }
                _ => return (result, attempt),
            }
        }
    }

    fn backoff(&self, attempt: u32, error: &TransportError) -> Duration {
        let cap = self.config.max_backoff_ms;
        let ms = match error {
            TransportError::Status {
                retry_after: Some(secs), ..
            } => secs.saturating_mul(1000),
            _ => self
                .config
                .backoff_ms
                .saturating_mul(1u64 << (attempt - 1).min(20)),
        };
        Duration::from_millis(ms.min(cap))
    }
}

fn extract_content(body: String) -> ChatResponse {
    let parsed: Option<Json> = serde_json::from_str(&body).ok();
    let content = parsed
        .as_ref()
        .and_then(|j| j.pointer("/choices/0/message/content"))
        .and_then(Json::as_str)
        .map(str::to_string);
    let model = parsed
        .as_ref()
        .and_then(|j| j.get("model"))
        .and_then(Json::as_str)
        .map(str::to_string);
    ChatResponse {
        content: content.unwrap_or(body),
        model,
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), DecoderError> {
    std::fs::write(path, bytes).map_err(|source| DecoderError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Decodes every prompt with at most `parallelism` requests in flight.
///
/// With `archive` set, each raw response is written to
/// `<archive>/<case>__<regime>.txt` before it is parsed, and the full record to
/// `<archive>/<case>__<regime>.json`. Rejected credentials abort the batch;
/// every other failure is recorded and the batch continues. Records come back
/// sorted by (case id, regime).
pub fn decode_batch(
    prompts: &[PromptRecord],
    client: &ChatClient,
    parallelism: usize,
    archive: Option<&Path>,
) -> Result<Vec<DecodeRecord>, DecoderError> {
    if let Some(dir) = archive {
        std::fs::create_dir_all(dir).map_err(|source| DecoderError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| DecoderError::Config(e.to_string()))?;
    let mut records = pool.install(|| {
        prompts
            .par_iter()
            .map(|p| decode_one(p, client, archive))
            .collect::<Result<Vec<_>, _>>()
    })?;
    records.sort_by(|a, b| (&a.case_id, a.regime).cmp(&(&b.case_id, b.regime)));
    Ok(records)
}

fn decode_one(prompt: &PromptRecord, client: &ChatClient, archive: Option<&Path>) -> Result<DecodeRecord, DecoderError> {
    let requested_at = now();
    let (result, attempts) = client.send(&prompt.prompt);
    let responded_at = now();
    let mut record = DecodeRecord {
        case_id: prompt.case_id.clone(),
        regime: prompt.regime,
        prompt: prompt.prompt.clone(),
        raw_response: None,
        atoms: None,
        failure: None,
        dropped_atoms: 0,
        requested_at,
        responded_at,
        model: None,
        attempts,
    };
    match result {
        Ok(response) => {
            if let Some(dir) = archive {
                write(&dir.join(format!("{}.txt", record.stem())), response.content.as_bytes())?;
            }
            record.model = response.model;
            match parse_decoder_output(&response.content, client.config().strict_json) {
                Ok(parsed) => {
                    record.atoms = Some(parsed.atoms);
                    record.dropped_atoms = parsed.dropped.len();
                }
                Err(e) => record.failure = Some(format!("parse: {e}")),
            }
            record.raw_response = Some(response.content);
        }
        Err(e) if e.is_auth() => {
            let TransportError::Status { status, body, .. } = e else { unreachable!() };
            return Err(DecoderError::Auth { status, body });
        }
        Err(e) => record.failure = Some(format!("transport: {e}")),
    }
    if let Some(dir) = archive {
        let json = serde_json::to_string_pretty(&record).expect("record serializes");
        write(&dir.join(format!("{}.json", record.stem())), json.as_bytes())?;
    }
    Ok(record)
}
