//! Byte-pair-encoding token counting over tiktoken-style rank files.
//!
//! Rank files hold one `base64(bytes) rank` entry per line. Text is split
//! into pre-token spans by the vocabulary's pattern; inside each span the
//! adjacent pair with the lowest rank is merged until no pair is in the
//! vocabulary. Special tokens are never recognised: all input is plain text.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use fancy_regex::Regex;
use sha2::{Digest, Sha256};

/// Pre-tokenization pattern of `cl100k_base`.
pub const CL100K_PATTERN: &str = r"'(?i:[sdmt]|ll|ve|re)|[^\r\n\p{L}\p{N}]?+\p{L}++|\p{N}{1,3}+| ?[^\s\p{L}\p{N}]++[\r\n]*+|\s++$|\s*[\r\n]|\s+(?!\S)|\s";

/// Pre-tokenization pattern of `o200k_base`.
pub const O200K_PATTERN: &str = concat!(
    r"[^\r\n\p{L}\p{N}]?[\p{Lu}\p{Lt}\p{Lm}\p{Lo}\p{M}]*[\p{Ll}\p{Lm}\p{Lo}\p{M}]+(?i:'s|'t|'re|'ve|'m|'ll|'d)?",
    "|",
    r"[^\r\n\p{L}\p{N}]?[\p{Lu}\p{Lt}\p{Lm}\p{Lo}\p{M}]+[\p{Ll}\p{Lm}\p{Lo}\p{M}]*(?i:'s|'t|'re|'ve|'m|'ll|'d)?",
    "|",
    r"\p{N}{1,3}",
    "|",
    r" ?[^\s\p{L}\p{N}]+[\r\n/]*",
    "|",
    r"\s*[\r\n]+",
    "|",
    r"\s+(?!\S)",
    "|",
    r"\s+"
);

/// Published SHA-256 digests of the two standard rank files.
pub const CL100K_SHA256: &str = "223921b76ee99bde995b7ff738513eef100fb51d18c93597a113bcffe865b2a7";
pub const O200K_SHA256: &str = "446a9538cb6c348e3516120d7c08b09f57c36495e2acfffe59a5bf8b0cfb1a2d";

/// A named vocabulary family: its pattern and special tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSpec {
    pub name: &'static str,
    pub pattern: &'static str,
    pub sha256: &'static str,
    pub special_tokens: &'static [(&'static str, u32)],
}

pub const CL100K_BASE: VocabSpec = VocabSpec {
    name: "cl100k_base",
    pattern: CL100K_PATTERN,
    sha256: CL100K_SHA256,
    special_tokens: &[
        ("<|endoftext|>", 100257),
        ("<|fim_prefix|>", 100258),
        ("<|fim_middle|>", 100259),
        ("<|fim_suffix|>", 100260),
        ("<|endofprompt|>", 100276),
    ],
};

pub const O200K_BASE: VocabSpec = VocabSpec {
    name: "o200k_base",
    pattern: O200K_PATTERN,
    sha256: O200K_SHA256,
    special_tokens: &[("<|endoftext|>", 199999), ("<|endofprompt|>", 200018)],
};

pub const STANDARD_VOCABS: [VocabSpec; 2] = [O200K_BASE, CL100K_BASE];

impl VocabSpec {
    pub fn by_name(name: &str) -> Option<VocabSpec> {
        STANDARD_VOCABS.into_iter().find(|v| v.name == name)
    }

    /// Short config key (`cl100k`, `o200k`).
    pub fn short_name(&self) -> &'static str {
        self.name.trim_end_matches("_base")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("cannot read rank file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("rank {rank} appears on line {first_line} and line {line}")]
    DuplicateRank {
        rank: u32,
        first_line: usize,
        line: usize,
    },
    #[error("token bytes on line {line} already defined on line {first_line}")]
    DuplicateToken { first_line: usize, line: usize },
    #[error("rank file {path} has SHA-256 {found}; {name} is published as {expected}")]
    HashMismatch {
        path: PathBuf,
        name: &'static str,
        expected: &'static str,
        found: String,
    },
    #[error("no rank file for {name}: set {env_var} or place {file} in one of {searched:?}")]
    NotFound {
        name: &'static str,
        env_var: String,
        file: String,
        searched: Vec<PathBuf>,
    },
    #[error("single-byte token {0:#04x} missing from the rank file")]
    MissingByte(u8),
    #[error("pre-tokenization pattern does not compile: {0}")]
    Pattern(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GainError {
    #[error("original text has no tokens; gain is undefined")]
    EmptyOriginal,
}

pub struct BpeVocabulary {
    name: String,
    ranks: HashMap<Vec<u8>, u32>,
    pattern_text: String,
    pattern: Regex,
    special_tokens: BTreeMap<String, u32>,
    sha256: String,
}

impl fmt::Debug for BpeVocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BpeVocabulary")
            .field("name", &self.name)
            .field("ranks", &self.ranks.len())
            .field("sha256", &self.sha256)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct TokenCount {
    pub vocabulary: String,
    pub count: usize,
}

fn parse_rank_text(text: &str) -> Result<HashMap<Vec<u8>, u32>, VocabError> {
    let mut ranks = HashMap::new();
    let mut rank_lines: HashMap<u32, usize> = HashMap::new();
    let mut token_lines: HashMap<Vec<u8>, usize> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let (Some(encoded), Some(rank_text), None) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(VocabError::Malformed {
                line: line_no,
                message: "expected `<base64> <rank>`".into(),
            });
        };
        let bytes = STANDARD.decode(encoded).map_err(|e| VocabError::Malformed {
            line: line_no,
            message: format!("bad base64: {e}"),
        })?;
        if bytes.is_empty() {
            return Err(VocabError::Malformed {
                line: line_no,
                message: "empty token".into(),
            });
        }
        let rank: u32 = rank_text.parse().map_err(|_| VocabError::Malformed {
            line: line_no,
            message: format!("bad rank `{rank_text}`"),
        })?;
        if let Some(&first_line) = rank_lines.get(&rank) {
            return Err(VocabError::DuplicateRank {
                rank,
                first_line,
                line: line_no,
            });
        }
        if let Some(&first_line) = token_lines.get(&bytes) {
            return Err(VocabError::DuplicateToken {
                first_line,
                line: line_no,
            });
        }
        rank_lines.insert(rank, line_no);
        token_lines.insert(bytes.clone(), line_no);
        ranks.insert(bytes, rank);
    }
    for b in 0..=255u8 {
        if !ranks.contains_key(&[b][..]) {
            return Err(VocabError::MissingByte(b));
        }
    }
    Ok(ranks)
}

impl BpeVocabulary {
    pub fn from_rank_text(
        name: &str,
        rank_text: &str,
        pattern: &str,
        special_tokens: &[(&str, u32)],
    ) -> Result<Self, VocabError> {
        let ranks = parse_rank_text(rank_text)?;
        let regex = Regex::new(pattern).map_err(|e| VocabError::Pattern(e.to_string()))?;
        Ok(BpeVocabulary {
            name: name.to_string(),
            ranks,
            pattern_text: pattern.to_string(),
            pattern: regex,
            special_tokens: special_tokens
                .iter()
                .map(|(s, id)| (s.to_string(), *id))
                .collect(),
            sha256: hex::encode(Sha256::digest(rank_text.as_bytes())),
        })
    }

    pub fn load(path: &Path, spec: &VocabSpec) -> Result<Self, VocabError> {
        load_vocabulary(path, spec.name, spec.pattern, spec.special_tokens)
    }

    /// Loads a standard vocabulary and checks the file against its published hash.
    pub fn load_verified(path: &Path, spec: &VocabSpec) -> Result<Self, VocabError> {
        let vocab = Self::load(path, spec)?;
        if vocab.sha256 != spec.sha256 {
            return Err(VocabError::HashMismatch {
                path: path.to_path_buf(),
                name: spec.name,
                expected: spec.sha256,
                found: vocab.sha256,
            });
        }
        Ok(vocab)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn rank(&self, bytes: &[u8]) -> Option<u32> {
        self.ranks.get(bytes).copied()
    }

    pub fn pattern(&self) -> &str {
        &self.pattern_text
    }

    pub fn special_tokens(&self) -> &BTreeMap<String, u32> {
        &self.special_tokens
    }

    /// SHA-256 of the rank file contents.
    pub fn sha256(&self) -> &str {
        &self.sha256
    }

    pub fn count_tokens(&self, text: &str) -> TokenCount {
        TokenCount {
            vocabulary: self.name.clone(),
            count: self.count(text),
        }
    }

    pub fn count(&self, text: &str) -> usize {
        let mut total = 0;
        let mut cursor = 0;
        for found in self.pattern.find_iter(text) {
            match found {
                Ok(m) => {
                    if m.start() > cursor {
                        total += self.count_piece(text[cursor..m.start()].as_bytes());
                    }
                    total += self.count_piece(m.as_str().as_bytes());
                    cursor = m.end();
                }
                // backtrack limit: fall back to merging the rest as one span
                Err(_) => break,
            }
        }
        if cursor < text.len() {
            total += self.count_piece(text[cursor..].as_bytes());
        }
        total
    }

    fn count_piece(&self, piece: &[u8]) -> usize {
        match piece.len() {
            0 => 0,
            1 => 1,
            _ if self.ranks.contains_key(piece) => 1,
            _ => self.merge(piece),
        }
    }

    fn merge(&self, piece: &[u8]) -> usize {
        // parts[i] = (start offset, rank of the pair starting at part i)
        let rank_of = |parts: &[(usize, u32)], i: usize| -> u32 {
            if i + 2 < parts.len() {
                self.ranks
                    .get(&piece[parts[i].0..parts[i + 2].0])
                    .copied()
                    .unwrap_or(u32::MAX)
            } else {
                u32::MAX
            }
        };
        let mut parts: Vec<(usize, u32)> = (0..=piece.len()).map(|i| (i, u32::MAX)).collect();
        for i in 0..parts.len().saturating_sub(2) {
            parts[i].1 = rank_of(&parts, i);
        }
        loop {
            let mut best = (u32::MAX, 0usize);
            for (i, &(_, r)) in parts[..parts.len() - 1].iter().enumerate() {
                if r < best.0 {
                    best = (r, i);
                }
            }
            if best.0 == u32::MAX {
                break;
            }
            let i = best.1;
            parts.remove(i + 1);
            parts[i].1 = rank_of(&parts, i);
            if i > 0 {
                parts[i - 1].1 = rank_of(&parts, i - 1);
            }
        }
        parts.len() - 1
    }
}

pub fn load_vocabulary(
    path: &Path,
    name: &str,
    pattern: &str,
    special_tokens: &[(&str, u32)],
) -> Result<BpeVocabulary, VocabError> {
    let text = fs::read_to_string(path).map_err(|source| VocabError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    BpeVocabulary::from_rank_text(name, &text, pattern, special_tokens)
}

/// Finds `<name>.tiktoken` for a standard vocabulary: the `SEMZIP_<SHORT>_PATH`
/// variable wins, then each of `dirs` in order, then the copy shipped inside a
/// `tiktoken-rs` source package in the local cargo registry, if any.
pub fn find_rank_file(spec: &VocabSpec, dirs: &[PathBuf]) -> Result<PathBuf, VocabError> {
    let file = format!("{}.tiktoken", spec.name);
    let env_var = format!("SEMZIP_{}_PATH", spec.short_name().to_uppercase());
    if let Some(p) = std::env::var_os(&env_var) {
        return Ok(PathBuf::from(p));
    }
    let mut searched: Vec<PathBuf> = dirs.to_vec();
    for dir in dirs {
        let candidate = dir.join(&file);
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    let cargo_home = std::env::var_os("CARGO_HOME")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cargo")));
    if let Some(registry) = cargo_home.map(|h| h.join("registry/src")) {
        searched.push(registry.clone());
        let mut packages: Vec<PathBuf> = fs::read_dir(&registry)
            .into_iter()
            .flatten()
            .flatten()
            .flat_map(|index| fs::read_dir(index.path()).into_iter().flatten().flatten())
            .map(|entry| entry.path())
            .filter(|p| {
                p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("tiktoken-rs-"))
            })
            .collect();
        packages.sort();
        if let Some(found) = packages
            .iter()
            .rev()
            .map(|p| p.join("assets").join(&file))
            .find(|p| p.is_file())
        {
            return Ok(found);
        }
    }
    Err(VocabError::NotFound {
        name: spec.name,
        env_var,
        file,
        searched,
    })
}

pub fn count_tokens(text: &str, vocab: &BpeVocabulary) -> TokenCount {
    vocab.count_tokens(text)
}

/// `1 - compressed/original`.
pub fn gain_from_counts(original: usize, compressed: usize) -> Result<f64, GainError> {
    if original == 0 {
        return Err(GainError::EmptyOriginal);
    }
    Ok(1.0 - compressed as f64 / original as f64)
}

pub fn token_gain(original: &str, compressed: &str, vocab: &BpeVocabulary) -> Result<f64, GainError> {
    gain_from_counts(vocab.count(original), vocab.count(compressed))
}
