//! Decoder bridge: prompt rendering, prompt export, the chat-completion client,
//! and tolerant parsing of model output back into atoms.
//!
//! The only non-template input to a prompt is the representation payload; the
//! original text and gold atoms never reach this module.

mod client;
mod parse;
pub mod stub;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atom::SemanticAtom;
use crate::case::{CaseError, CaseSet, Regime};
use crate::codec::{Codec, CodecError};

pub use client::{decode_batch, ChatClient, ChatResponse, TransportError};
pub use parse::{parse_decoder_output, ParseFailure, ParsedOutput};

pub const TEMPLATE: &str = include_str!("../../assets/prompts/decoder.txt");
/// SHA-256 of the bundled template; the bridge refuses to run on a mismatch.
pub const TEMPLATE_SHA256: &str = "359be84e1054557e0ff9aa478e22461b883067e7bc3af2d0d3032314ae66c7cd";
pub const PLACEHOLDER: &str = "<COMPRESSED_REPRESENTATION>";
pub const PROMPTS_HEADER: &str = "semzip-prompts/1";
pub const DEFAULT_API_KEY_ENV: &str = "SEMZIP_API_KEY";
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

#[derive(Debug, thiserror::Error)]
pub enum DecoderError {
    #[error("prompt template hash {found} does not match the pinned {expected}")]
    TemplateHash { expected: &'static str, found: String },
    #[error("prompt template has no `{PLACEHOLDER}` placeholder")]
    TemplatePlaceholder,
    #[error("sampling must be temperature 0 and top_p 1.0 (got {temperature}, {top_p}); pass --unsafe-sampling to override")]
    UnsafeSampling { temperature: f64, top_p: f64 },
    #[error("invalid decoder config: {0}")]
    Config(String),
    #[error("api key variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("endpoint rejected credentials (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("case `{case_id}` has no {regime} payload: {source}")]
    Render {
        case_id: String,
        regime: Regime,
        #[source]
        source: CodecError,
    },
    #[error("malformed prompt batch line {line}: {message}")]
    Batch { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("http client: {0}")]
    Http(String),
}

/// A prompt template whose hash has been checked against the pinned value.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn builtin() -> PromptTemplate {
        PromptTemplate::verified(TEMPLATE).expect("bundled template matches its pinned hash")
    }

    /// Accepts `text` only if it hashes to [`TEMPLATE_SHA256`].
    pub fn verified(text: &str) -> Result<PromptTemplate, DecoderError> {
        let found = sha256_hex(text);
        if found != TEMPLATE_SHA256 {
            return Err(DecoderError::TemplateHash {
                expected: TEMPLATE_SHA256,
                found,
            });
        }
        if !text.contains(PLACEHOLDER) {
            return Err(DecoderError::TemplatePlaceholder);
        }
        Ok(PromptTemplate { text: text.to_string() })
    }

    pub fn load(path: &Path) -> Result<PromptTemplate, DecoderError> {
        let text = std::fs::read_to_string(path).map_err(|source| DecoderError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        PromptTemplate::verified(&text)
    }

    pub fn sha256(&self) -> String {
        sha256_hex(&self.text)
    }

    /// Pure substitution of the placeholder; the payload is not escaped.
    pub fn render(&self, payload: &str) -> String {
        self.text.replacen(PLACEHOLDER, payload, 1)
    }
}

pub fn render_prompt(payload: &str) -> String {
    PromptTemplate::builtin().render(payload)
}

fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Sampling, transport and retry settings for the decoder endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub model: String,
    pub endpoint: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Environment variable holding the bearer token; `None` sends no
    /// credentials (the offline stub).
    pub api_key_env: Option<String>,
    /// Require the whole response to be one JSON object.
    pub strict_json: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            model: "gpt-4o-mini".into(),
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            temperature: 0.0,
            top_p: 1.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            timeout_secs: 120,
            max_attempts: 4,
            backoff_ms: 500,
            max_backoff_ms: 30_000,
            api_key_env: Some(DEFAULT_API_KEY_ENV.into()),
            strict_json: false,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, unsafe_sampling: bool) -> Result<(), DecoderError> {
        if !unsafe_sampling && (self.temperature != 0.0 || self.top_p != 1.0) {
            return Err(DecoderError::UnsafeSampling {
                temperature: self.temperature,
                top_p: self.top_p,
            });
        }
        if self.model.trim().is_empty() {
            return Err(DecoderError::Config("model identifier is empty".into()));
        }
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(DecoderError::Config(format!("endpoint `{}` is not an http(s) URL", self.endpoint)));
        }
        if self.max_attempts == 0 {
            return Err(DecoderError::Config("max_attempts must be at least 1".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(DecoderError::Config("max_output_tokens must be at least 1".into()));
        }
        Ok(())
    }

    /// The bearer token, or `None` when the config sends no credentials.
    pub fn api_key(&self) -> Result<Option<String>, DecoderError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .ok()
                .filter(|k| !k.is_empty())
                .map(Some)
                .ok_or_else(|| DecoderError::MissingApiKey(var.clone())),
        }
    }
}

/// One exported prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub case_id: String,
    pub regime: Regime,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct BatchHeader {
    header: String,
    template_sha256: String,
    records: usize,
}

/// The text a decoder sees for `regime`: the case's stored representation if
/// it has one, otherwise a fresh rendering of its gold atoms. A representation
/// that uses a protocol dictionary is preceded by the dictionary's `@DICT`
/// header line, since the decoder cannot expand codes it was never shown.
pub fn representation_payload(
    set: &CaseSet,
    case_id: &str,
    regime: Regime,
    codec: &Codec,
) -> Result<String, DecoderError> {
    let case = set.get(case_id).ok_or_else(|| DecoderError::Config(format!("unknown case `{case_id}`")))?;
    if let Some(rep) = case.representation(regime) {
        return Ok(match rep.dictionary_id.as_deref().and_then(|id| set.dictionary(id)) {
            Some(dict) => format!("{}\n{}", dict.header_text, rep.payload),
            None => rep.payload.clone(),
        });
    }
    let atoms: Vec<SemanticAtom> = case.gold_atoms.iter().map(|g| g.atom.clone()).collect();
    codec
        .render(&atoms, regime, None)
        .map(|r| r.payload)
        .map_err(|source| DecoderError::Render {
            case_id: case_id.to_string(),
            regime,
            source,
        })
}

/// Prompts for every (case, regime), ordered by case id then regime order.
pub fn prompt_records(
    set: &CaseSet,
    regimes: &[Regime],
    template: &PromptTemplate,
    codec: &Codec,
) -> Result<Vec<PromptRecord>, DecoderError> {
    let mut regimes = regimes.to_vec();
    regimes.sort();
    regimes.dedup();
    let mut ids = set.ids();
    ids.sort();
    let mut out = Vec::new();
    for id in ids {
        for &regime in &regimes {
            let payload = representation_payload(set, id, regime, codec)?;
            out.push(PromptRecord {
                case_id: id.to_string(),
                regime,
                prompt: template.render(&payload),
            });
        }
    }
    Ok(out)
}

/// JSONL text: a header record, then one record per prompt.
pub fn export_prompts(records: &[PromptRecord], template: &PromptTemplate) -> String {
    let header = BatchHeader {
        header: PROMPTS_HEADER.into(),
        template_sha256: template.sha256(),
        records: records.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_prompts(path: &Path, records: &[PromptRecord], template: &PromptTemplate) -> Result<(), DecoderError> {
    std::fs::write(path, export_prompts(records, template)).map_err(|source| DecoderError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_prompts(path: &Path) -> Result<Vec<PromptRecord>, DecoderError> {
    let text = std::fs::read_to_string(path).map_err(|source| DecoderError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_prompts(&text)
}

pub fn parse_prompts(text: &str) -> Result<Vec<PromptRecord>, DecoderError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, message: String| DecoderError::Batch { line: line + 1, message };
    let header: BatchHeader = match lines.next() {
        Some((i, l)) => serde_json::from_str(l).map_err(|e| bad(i, e.to_string()))?,
        None => return Err(bad(0, "missing header record".into())),
    };
    if header.header != PROMPTS_HEADER {
        return Err(bad(0, format!("expected header `{PROMPTS_HEADER}`")));
    }
    let records: Vec<PromptRecord> = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i, e.to_string())))
        .collect::<Result<_, _>>()?;
    if records.len() != header.records {
        return Err(bad(0, format!("header announces {} records, found {}", header.records, records.len())));
    }
    Ok(records)
}

/// Archive entry for one decode attempt sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub case_id: String,
    pub regime: Regime,
    pub prompt: String,
    /// Exact response content; `None` only when no response ever arrived.
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<SemanticAtom>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Atoms present in the output but dropped as invalid.
    pub dropped_atoms: usize,
    pub requested_at: String,
    pub responded_at: String,
    pub model: Option<String>,
    pub attempts: u32,
}

impl DecodeRecord {
    /// File stem under `raw/`.
    pub fn stem(&self) -> String {
        record_stem(&self.case_id, self.regime)
    }

    /// Re-derive atoms from the archived raw text.
    pub fn reparse(&mut self, strict: bool) {
        let Some(raw) = &self.raw_response else { return };
        match parse_decoder_output(raw, strict) {
            Ok(parsed) => {
                self.atoms = Some(parsed.atoms);
                self.dropped_atoms = parsed.dropped.len();
                self.failure = None;
            }
            Err(e) => {
                self.atoms = None;
                self.dropped_atoms = 0;
                self.failure = Some(format!("parse: {e}"));
            }
        }
    }
}

pub fn record_stem(case_id: &str, regime: Regime) -> String {
    format!("{case_id}__{regime}")
}
