//! Regime renderers, symbolic parsers and protocol dictionaries.

pub mod dict;
pub mod grammar;
pub mod prose;
pub mod symbolic;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::atom::SemanticAtom;
use crate::case::Regime;
use crate::normalize::{normalize_atom, AliasTable};

pub use dict::{amortization_break_even, parse_dictionary, DictError, ProtocolDictionary};
pub use grammar::{Grammar, GrammarError};
use symbolic::SymbolicCodec;

pub const GLYPH_HEADER: &str = "semzip-glyphs/1";
pub const DEFAULT_GLYPHS: &str = include_str!("../../assets/grammars/szip_emoji.glyphs");

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("{regime}: atom {index} (`{subject}`) cannot be rendered: {reason}")]
    Render {
        regime: Regime,
        index: usize,
        subject: String,
        reason: String,
    },
    #[error("unknown segment `{segment}`")]
    UnknownSegment { segment: String },
    #[error("unbalanced braces in `{segment}`")]
    UnbalancedBraces { segment: String },
    #[error("unterminated quote in `{segment}`")]
    UnterminatedQuote { segment: String },
    #[error("malformed quoted string `{segment}`")]
    BadQuoted { segment: String },
    #[error("undefined dictionary code `{code}`")]
    UndefinedCode { code: String },
    #[error("expected header `{expected}`, found `{found}`")]
    MissingHeader { expected: String, found: String },
    #[error("malformed annotation in `{segment}`")]
    BadAnnotation { segment: String },
    #[error("domain `{tag}` takes fewer than {count} slots")]
    TooManySlots { tag: String, count: usize },
    #[error("regime `{0}` has no deterministic parser")]
    NotDecodable(Regime),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("glyph table line {line}: {message}")]
    Glyphs { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegimeRendering {
    pub regime: Regime,
    pub payload: String,
    pub decodable: bool,
}

/// Word-level ASCII → glyph substitutions for the emoji regime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphTable {
    words: BTreeMap<String, String>,
    marks: BTreeMap<char, String>,
    source: String,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.'
}

impl GlyphTable {
    pub fn builtin() -> GlyphTable {
        GlyphTable::parse(DEFAULT_GLYPHS).expect("bundled glyph table is valid")
    }

    pub fn parse(text: &str) -> Result<GlyphTable, CodecError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, GLYPH_HEADER)) => {}
            found => {
                return Err(CodecError::Glyphs {
                    line: found.map_or(1, |(line, _)| line),
                    message: format!("expected header `{GLYPH_HEADER}`"),
                })
            }
        }
        let mut table = GlyphTable {
            words: BTreeMap::new(),
            marks: BTreeMap::new(),
            source: text.to_string(),
        };
        for (line, l) in lines {
            let (from, to) = l.split_once(" = ").ok_or(CodecError::Glyphs {
                line,
                message: "expected `token = glyph`".into(),
            })?;
            let (from, to) = (from.trim(), to.trim().to_string());
            let mut chars = from.chars();
            let duplicate = match (chars.next(), chars.next()) {
                (Some(c), None) if !is_word_char(c) => table.marks.insert(c, to).is_some(),
                _ if from.chars().all(is_word_char) && !from.is_empty() => {
                    table.words.insert(from.to_string(), to).is_some()
                }
                _ => {
                    return Err(CodecError::Glyphs {
                        line,
                        message: format!("`{from}` is neither a word nor a single mark"),
                    })
                }
            };
            if duplicate {
                return Err(CodecError::Glyphs {
                    line,
                    message: format!("`{from}` mapped twice"),
                });
            }
        }
        Ok(table)
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }

    pub fn apply(&self, ascii: &str) -> String {
        let mut out = String::with_capacity(ascii.len() * 2);
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut String| {
            if !word.is_empty() {
                match self.words.get(word.as_str()) {
                    Some(g) => out.push_str(g),
                    None => out.push_str(word),
                }
                word.clear();
            }
        };
        for c in ascii.chars() {
            if is_word_char(c) {
                word.push(c);
                continue;
            }
            flush(&mut word, &mut out);
            match self.marks.get(&c) {
                Some(g) => out.push_str(g),
                None => out.push(c),
            }
        }
        flush(&mut word, &mut out);
        out
    }
}

/// Grammars, glyphs and the alias table used to compare round trips.
#[derive(Debug, Clone)]
pub struct Codec {
    pub table: AliasTable,
    pub ccl_core: Grammar,
    pub ccl_min: Grammar,
    pub szip_ascii: Grammar,
    pub glyphs: GlyphTable,
}

impl Codec {
    pub fn new(table: AliasTable) -> Codec {
        Codec {
            table,
            ccl_core: Grammar::builtin(Regime::CclCore).expect("decodable"),
            ccl_min: Grammar::builtin(Regime::CclMin).expect("decodable"),
            szip_ascii: Grammar::builtin(Regime::SzipAscii).expect("decodable"),
            glyphs: GlyphTable::builtin(),
        }
    }

    /// Bundled grammars with the bundled alias table.
    pub fn builtin() -> &'static Codec {
        static CODEC: OnceLock<Codec> = OnceLock::new();
        CODEC.get_or_init(|| Codec::new(AliasTable::builtin()))
    }

    pub fn grammar(&self, regime: Regime) -> Option<&Grammar> {
        match regime {
            Regime::CclCore => Some(&self.ccl_core),
            Regime::CclMin => Some(&self.ccl_min),
            Regime::SzipAscii => Some(&self.szip_ascii),
            _ => None,
        }
    }

    /// `(name, sha256)` for each grammar/glyph table, for run manifests.
    pub fn table_hashes(&self) -> Vec<(String, String)> {
        vec![
            ("ccl_core.grammar".into(), self.ccl_core.sha256()),
            ("ccl_min.grammar".into(), self.ccl_min.sha256()),
            ("szip_ascii.grammar".into(), self.szip_ascii.sha256()),
            ("szip_emoji.glyphs".into(), self.glyphs.sha256()),
        ]
    }

    pub fn render(
        &self,
        atoms: &[SemanticAtom],
        regime: Regime,
        dict: Option<&ProtocolDictionary>,
    ) -> Result<RegimeRendering, CodecError> {
        let payload = match regime {
            Regime::Prose => prose::render_prose(atoms),
            Regime::CanonicalStructured => prose::render_structured(atoms),
            Regime::SzipEmoji => {
                let ascii = self.render(atoms, Regime::SzipAscii, dict)?.payload;
                self.glyphs.apply(&ascii)
            }
            symbolic => {
                let grammar = self.grammar(symbolic).expect("symbolic regime");
                SymbolicCodec::new(grammar, dict, &self.table).render(atoms)?
            }
        };
        Ok(RegimeRendering {
            regime,
            payload,
            decodable: regime.is_decodable(),
        })
    }

    pub fn parse_symbolic(
        &self,
        payload: &str,
        regime: Regime,
        dict: Option<&ProtocolDictionary>,
    ) -> Result<Vec<SemanticAtom>, CodecError> {
        let grammar = self.grammar(regime).ok_or(CodecError::NotDecodable(regime))?;
        SymbolicCodec::new(grammar, dict, &self.table).parse(payload)
    }

    /// Multiset equality over normalized (type, subject, predicate, value, modality, scope).
    pub fn same_atoms(&self, a: &[SemanticAtom], b: &[SemanticAtom]) -> bool {
        let keys = |atoms: &[SemanticAtom]| {
            let mut k: Vec<String> = atoms
                .iter()
                .map(|x| format!("{:?}", normalize_atom(x, &self.table).structural_key()))
                .collect();
            k.sort();
            k
        };
        keys(a) == keys(b)
    }
}

pub fn render(
    atoms: &[SemanticAtom],
    regime: Regime,
    dict: Option<&ProtocolDictionary>,
) -> Result<RegimeRendering, CodecError> {
    Codec::builtin().render(atoms, regime, dict)
}

pub fn parse_symbolic(
    payload: &str,
    regime: Regime,
    dict: Option<&ProtocolDictionary>,
) -> Result<Vec<SemanticAtom>, CodecError> {
    Codec::builtin().parse_symbolic(payload, regime, dict)
}
