//! Protocol dictionaries: shared `@DICT/<TAG>: code=expansion; ...` headers.

use std::fmt;

use crate::normalize::normalize_text;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DictError {
    #[error("dictionary must begin with `@DICT/`")]
    MissingPrefix,
    #[error("dictionary header has no `:` after the domain tag")]
    MissingColon,
    #[error("domain tag `{0}` must be nonempty uppercase ASCII")]
    BadDomain(String),
    #[error("entry {index} (`{entry}`) has no `=`")]
    MissingEquals { index: usize, entry: String },
    #[error("entry {index} has an empty code or expansion")]
    EmptyEntry { index: usize },
    #[error("code `{0}` is defined more than once")]
    DuplicateCode(String),
    #[error("codes `{first}` and `{second}` both expand to `{expansion}`")]
    DuplicateExpansion {
        first: String,
        second: String,
        expansion: String,
    },
    #[error("expansion `{expansion}` of `{code}` is not in canonical form (`{canonical}`)")]
    NotCanonical {
        code: String,
        expansion: String,
        canonical: String,
    },
    #[error("code `{0}` may not contain whitespace, `;`, `=` or quotes")]
    BadCode(String),
    #[error("per-use saving must be at least one token (got {0}); the dictionary never amortizes")]
    NeverAmortizes(i64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictEntry {
    pub code: String,
    pub expansion: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolDictionary {
    pub dictionary_id: String,
    pub domain: String,
    pub entries: Vec<DictEntry>,
    /// Canonical `@DICT` block; parsing it yields this dictionary again.
    pub header_text: String,
}

impl ProtocolDictionary {
    pub fn parse(text: &str) -> Result<Self, DictError> {
        parse_dictionary(text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn expand(&self, code: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.code == code)
            .map(|e| e.expansion.as_str())
    }

    /// Value code (`$x` or a plain code) whose expansion is `canonical`.
    pub fn value_code(&self, canonical: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| !e.code.starts_with('!') && e.expansion == canonical)
            .map(|e| e.code.as_str())
    }

    /// Subject named by a `!code` entry: `!car=avoid_rental_car` gives `rental_car`.
    pub fn negation_subject(&self, code: &str) -> Option<String> {
        let expansion = self.expand(&format!("!{code}"))?;
        Some(strip_negation_prefix(expansion).to_string())
    }

    /// Inverse of [`negation_subject`](Self::negation_subject).
    pub fn negation_code(&self, subject: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.code.starts_with('!') && strip_negation_prefix(&e.expansion) == subject)
            .map(|e| &e.code[1..])
    }
}

impl fmt::Display for ProtocolDictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.header_text)
    }
}

fn strip_negation_prefix(s: &str) -> &str {
    s.strip_prefix("avoid_")
        .or_else(|| s.strip_prefix("no_"))
        .unwrap_or(s)
}

fn render_header(domain: &str, entries: &[DictEntry]) -> String {
    let body: Vec<String> = entries
        .iter()
        .map(|e| format!("{}={}", e.code, e.expansion))
        .collect();
    if body.is_empty() {
        format!("@DICT/{domain}:")
    } else {
        format!("@DICT/{domain}: {}", body.join("; "))
    }
}

pub fn parse_dictionary(text: &str) -> Result<ProtocolDictionary, DictError> {
    let rest = text.trim().strip_prefix("@DICT/").ok_or(DictError::MissingPrefix)?;
    let (domain, body) = rest.split_once(':').ok_or(DictError::MissingColon)?;
    let domain = domain.trim();
    if domain.is_empty()
        || !domain
            .bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_')
    {
        return Err(DictError::BadDomain(domain.to_string()));
    }
    let mut entries: Vec<DictEntry> = Vec::new();
    for (index, raw) in body.split(';').map(str::trim).enumerate() {
        if raw.is_empty() {
            continue; // trailing or doubled semicolons
        }
        let (code, expansion) = raw.split_once('=').ok_or_else(|| DictError::MissingEquals {
            index,
            entry: raw.to_string(),
        })?;
        let (code, expansion) = (code.trim(), expansion.trim());
        if code.is_empty() || expansion.is_empty() {
            return Err(DictError::EmptyEntry { index });
        }
        if code
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, ';' | '=' | '"'))
        {
            return Err(DictError::BadCode(code.to_string()));
        }
        let canonical = normalize_text(expansion);
        if canonical != expansion {
            return Err(DictError::NotCanonical {
                code: code.to_string(),
                expansion: expansion.to_string(),
                canonical,
            });
        }
        if entries.iter().any(|e| e.code == code) {
            return Err(DictError::DuplicateCode(code.to_string()));
        }
        if let Some(prev) = entries.iter().find(|e| e.expansion == expansion) {
            return Err(DictError::DuplicateExpansion {
                first: prev.code.clone(),
                second: code.to_string(),
                expansion: expansion.to_string(),
            });
        }
        entries.push(DictEntry {
            code: code.to_string(),
            expansion: expansion.to_string(),
        });
    }
    Ok(ProtocolDictionary {
        dictionary_id: String::new(),
        domain: domain.to_string(),
        header_text: render_header(domain, &entries),
        entries,
    })
}

/// Smallest number of uses `N` with `N * saving > cost`.
pub fn amortization_break_even(
    dictionary_token_cost: u64,
    per_use_token_saving: i64,
) -> Result<u64, DictError> {
    if per_use_token_saving < 1 {
        return Err(DictError::NeverAmortizes(per_use_token_saving));
    }
    Ok(dictionary_token_cost / per_use_token_saving as u64 + 1)
}
