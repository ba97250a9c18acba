//! Versioned grammar tables for the symbolic regimes.
//!
//! A grammar file starts with `semzip-grammar/1 <regime>` and has up to six
//! sections:
//!
//! ```text
//! [settings]  header = @C1 | none     assign = = | :
//!             lists = braces | delimited
//!             annotation = words | letters
//!             negation = ! | none
//! [domains]   TAG = task_value scope
//! [slots]     TAG = KEY KEY ...        positional values after `@TAG`
//! [keys]      KEY = subject type predicate modality scope [flags]
//!             KEY = neglist [flags]
//! [values]    code = canonical_value
//! [subjects]  code = canonical_subject
//! ```
//!
//! Key flags: `multi` (one atom per list element), `alt` (render lists with
//! `|`), `suffix=<s>` (numeric unit suffix such as `4d`), `mark=+` (render
//! each element as `+item`), `domain=<TAG>` (row only applies inside that
//! domain), `domain_key` (the value selects the active domain).

use std::collections::BTreeSet;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::atom::{AtomType, Modality, Predicate, Scope};
use crate::case::Regime;
use crate::normalize::normalize_text;

pub const GRAMMAR_HEADER: &str = "semzip-grammar/1";

pub const CCL_CORE_GRAMMAR: &str = include_str!("../../assets/grammars/ccl_core.grammar");
pub const CCL_MIN_GRAMMAR: &str = include_str!("../../assets/grammars/ccl_min.grammar");
pub const SZIP_ASCII_GRAMMAR: &str = include_str!("../../assets/grammars/szip_ascii.grammar");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("grammar line {line}: {message}")]
pub struct GrammarError {
    pub line: usize,
    pub message: String,
}

fn gerr(line: usize, message: impl Into<String>) -> GrammarError {
    GrammarError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListStyle {
    /// `{a,b}`
    Braces,
    /// `a,b` (single element: `a,`)
    Delimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationStyle {
    /// `(constraint/allowed/must/trip)`
    Words,
    /// `(camr)`
    Letters,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    pub tag: String,
    pub task_value: String,
    pub scope: Scope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowScope {
    Fixed(Scope),
    /// The active domain's scope.
    Domain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomShape {
    pub subject: String,
    pub atom_type: AtomType,
    pub predicate: Predicate,
    pub modality: Modality,
    pub scope: RowScope,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowKind {
    Atom(AtomShape),
    /// Each element is a negated subject (`constraint / allowed / false / must`).
    NegList,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyRow {
    pub key: String,
    pub kind: RowKind,
    pub multi: bool,
    pub alt: bool,
    pub suffix: Option<String>,
    pub mark: Option<char>,
    pub domain: Option<String>,
    pub domain_key: bool,
}

impl KeyRow {
    pub fn applies_in(&self, domain: Option<&Domain>) -> bool {
        match &self.domain {
            None => true,
            Some(tag) => domain.is_some_and(|d| &d.tag == tag),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    pub regime: Regime,
    pub header: Option<String>,
    pub assign: char,
    pub lists: ListStyle,
    pub annotation: AnnotationStyle,
    pub negation_mark: Option<char>,
    pub domains: Vec<Domain>,
    pub slots: Vec<(String, Vec<String>)>,
    pub keys: Vec<KeyRow>,
    pub values: Vec<(String, String)>,
    pub subjects: Vec<(String, String)>,
    source: String,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Settings,
    Domains,
    Slots,
    Keys,
    Values,
    Subjects,
}

fn is_key_name(s: &str) -> bool {
    let mut bytes = s.bytes();
    bytes.next().is_some_and(|b| b.is_ascii_uppercase())
        && bytes.all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_' || b == b'.')
}

fn parse_enum<T: FromStr>(line: usize, field: &str, s: &str) -> Result<T, GrammarError> {
    s.parse()
        .map_err(|_| gerr(line, format!("unknown {field} `{s}`")))
}

fn parse_key_row(line: usize, key: &str, rhs: &str) -> Result<KeyRow, GrammarError> {
    if !is_key_name(key) {
        return Err(gerr(line, format!("key `{key}` must be UPPERCASE")));
    }
    let words: Vec<&str> = rhs.split_whitespace().collect();
    let (kind, flags) = match words.first() {
        Some(&"neglist") => (RowKind::NegList, &words[1..]),
        Some(_) if words.len() >= 5 => {
            let subject = words[0];
            if normalize_text(subject) != subject || subject.is_empty() {
                return Err(gerr(line, format!("subject `{subject}` is not canonical")));
            }
            let scope = if words[4] == "*" {
                RowScope::Domain
            } else {
                RowScope::Fixed(parse_enum(line, "scope", words[4])?)
            };
            let shape = AtomShape {
                subject: subject.to_string(),
                atom_type: parse_enum(line, "type", words[1])?,
                predicate: parse_enum(line, "predicate", words[2])?,
                modality: parse_enum(line, "modality", words[3])?,
                scope,
            };
            (RowKind::Atom(shape), &words[5..])
        }
        _ => {
            return Err(gerr(
                line,
                "expected `subject type predicate modality scope [flags]` or `neglist`",
            ))
        }
    };
    let mut row = KeyRow {
        key: key.to_string(),
        kind,
        multi: false,
        alt: false,
        suffix: None,
        mark: None,
        domain: None,
        domain_key: false,
    };
    for flag in flags {
        match flag.split_once('=') {
            None if *flag == "multi" => row.multi = true,
            None if *flag == "alt" => row.alt = true,
            None if *flag == "domain_key" => row.domain_key = true,
            Some(("suffix", s)) if !s.is_empty() => row.suffix = Some(s.to_string()),
            Some(("mark", "+")) => row.mark = Some('+'),
            Some(("domain", tag)) if is_key_name(tag) => row.domain = Some(tag.to_string()),
            _ => return Err(gerr(line, format!("unknown key flag `{flag}`"))),
        }
    }
    if row.domain_key && !matches!(&row.kind, RowKind::Atom(s) if !matches!(s.scope, RowScope::Domain))
    {
        return Err(gerr(line, "a domain_key row needs a fixed scope"));
    }
    Ok(row)
}

fn push_code(
    line: usize,
    table: &mut Vec<(String, String)>,
    code: &str,
    canonical: &str,
) -> Result<(), GrammarError> {
    if code.is_empty() || code.chars().any(|c| c.is_whitespace() || "\",:=/|+{}()!$@".contains(c)) {
        return Err(gerr(line, format!("code `{code}` contains a reserved character")));
    }
    if normalize_text(canonical) != canonical || canonical.is_empty() {
        return Err(gerr(line, format!("`{canonical}` is not a canonical token")));
    }
    if table.iter().any(|(c, _)| c == code) {
        return Err(gerr(line, format!("code `{code}` defined twice")));
    }
    if table.iter().any(|(_, v)| v == canonical) {
        return Err(gerr(line, format!("two codes expand to `{canonical}`")));
    }
    table.push((code.to_string(), canonical.to_string()));
    Ok(())
}

impl Grammar {
    pub fn builtin(regime: Regime) -> Option<Grammar> {
        let text = match regime {
            Regime::CclCore => CCL_CORE_GRAMMAR,
            Regime::CclMin => CCL_MIN_GRAMMAR,
            Regime::SzipAscii => SZIP_ASCII_GRAMMAR,
            _ => return None,
        };
        Some(Grammar::parse(text).expect("bundled grammar is valid"))
    }

    pub fn parse(text: &str) -> Result<Grammar, GrammarError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let regime = match lines.next() {
            Some((n, l)) => {
                let rest = l
                    .strip_prefix(GRAMMAR_HEADER)
                    .ok_or_else(|| gerr(n, format!("expected header `{GRAMMAR_HEADER} <regime>`")))?;
                let regime: Regime = parse_enum(n, "regime", rest.trim())?;
                if !regime.is_decodable() {
                    return Err(gerr(n, format!("regime `{regime}` has no symbolic grammar")));
                }
                regime
            }
            None => return Err(gerr(1, "empty grammar")),
        };
        let mut g = Grammar {
            regime,
            header: None,
            assign: '=',
            lists: ListStyle::Delimited,
            annotation: AnnotationStyle::Letters,
            negation_mark: None,
            domains: Vec::new(),
            slots: Vec::new(),
            keys: Vec::new(),
            values: Vec::new(),
            subjects: Vec::new(),
            source: text.to_string(),
        };
        let mut section = None;
        for (n, l) in lines {
            if let Some(name) = l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                section = Some(match name {
                    "settings" => Section::Settings,
                    "domains" => Section::Domains,
                    "slots" => Section::Slots,
                    "keys" => Section::Keys,
                    "values" => Section::Values,
                    "subjects" => Section::Subjects,
                    other => return Err(gerr(n, format!("unknown section `{other}`"))),
                });
                continue;
            }
            let (lhs, rhs) = l
                .split_once(" = ")
                .map(|(a, b)| (a.trim(), b.trim()))
                .ok_or_else(|| gerr(n, "expected `name = value`"))?;
            match section.ok_or_else(|| gerr(n, "entry outside a section"))? {
                Section::Settings => match (lhs, rhs) {
                    ("header", "none") => g.header = None,
                    ("header", h) if h.starts_with('@') && !h.contains(' ') => {
                        g.header = Some(h.to_string())
                    }
                    ("assign", "=") => g.assign = '=',
                    ("assign", ":") => g.assign = ':',
                    ("lists", "braces") => g.lists = ListStyle::Braces,
                    ("lists", "delimited") => g.lists = ListStyle::Delimited,
                    ("annotation", "words") => g.annotation = AnnotationStyle::Words,
                    ("annotation", "letters") => g.annotation = AnnotationStyle::Letters,
                    ("negation", "none") => g.negation_mark = None,
                    ("negation", "!") => g.negation_mark = Some('!'),
                    _ => return Err(gerr(n, format!("bad setting `{lhs} = {rhs}`"))),
                },
                Section::Domains => {
                    let words: Vec<&str> = rhs.split_whitespace().collect();
                    if !is_key_name(lhs) || words.len() != 2 {
                        return Err(gerr(n, "expected `TAG = task_value scope`"));
                    }
                    if normalize_text(words[0]) != words[0] {
                        return Err(gerr(n, format!("`{}` is not canonical", words[0])));
                    }
                    if g.domains.iter().any(|d| d.tag == lhs || d.task_value == words[0]) {
                        return Err(gerr(n, format!("domain `{lhs}` duplicates an earlier one")));
                    }
                    g.domains.push(Domain {
                        tag: lhs.to_string(),
                        task_value: words[0].to_string(),
                        scope: parse_enum(n, "scope", words[1])?,
                    });
                }
                Section::Slots => {
                    if g.slots.iter().any(|(t, _)| t == lhs) {
                        return Err(gerr(n, format!("slots for `{lhs}` defined twice")));
                    }
                    g.slots.push((
                        lhs.to_string(),
                        rhs.split_whitespace().map(str::to_string).collect(),
                    ));
                }
                Section::Keys => {
                    let row = parse_key_row(n, lhs, rhs)?;
                    if g
                        .keys
                        .iter()
                        .any(|r| r.key == row.key && r.domain == row.domain)
                    {
                        return Err(gerr(n, format!("key `{}` defined twice", row.key)));
                    }
                    if row.mark.is_some()
                        && g.keys.iter().any(|r| r.mark == row.mark && r.domain == row.domain)
                    {
                        return Err(gerr(n, "one mark row per domain"));
                    }
                    if row.domain_key && g.keys.iter().any(|r| !r.domain_key) {
                        return Err(gerr(n, "domain_key rows must come first"));
                    }
                    g.keys.push(row);
                }
                Section::Values => push_code(n, &mut g.values, lhs, rhs)?,
                Section::Subjects => push_code(n, &mut g.subjects, lhs, rhs)?,
            }
        }
        g.check_references()?;
        Ok(g)
    }

    fn check_references(&self) -> Result<(), GrammarError> {
        let tags: BTreeSet<&str> = self.domains.iter().map(|d| d.tag.as_str()).collect();
        for row in &self.keys {
            if let Some(tag) = &row.domain {
                if !tags.contains(tag.as_str()) {
                    return Err(gerr(0, format!("key `{}` names unknown domain `{tag}`", row.key)));
                }
            }
            if tags.contains(row.key.as_str()) {
                return Err(gerr(0, format!("key `{}` collides with a domain tag", row.key)));
            }
        }
        for (tag, keys) in &self.slots {
            if !tags.contains(tag.as_str()) {
                return Err(gerr(0, format!("slots for unknown domain `{tag}`")));
            }
            for key in keys {
                let domain = self.domain_by_tag(tag);
                match self.key_row(key, domain) {
                    Some(row) if !row.multi && matches!(row.kind, RowKind::Atom(_)) => {}
                    _ => {
                        return Err(gerr(
                            0,
                            format!("slot `{key}` of `{tag}` must be a single-valued key"),
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    /// The source text, byte-exact.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }

    pub fn domain_by_tag(&self, tag: &str) -> Option<&Domain> {
        self.domains.iter().find(|d| d.tag == tag)
    }

    pub fn domain_by_task(&self, task_value: &str) -> Option<&Domain> {
        self.domains.iter().find(|d| d.task_value == task_value)
    }

    pub fn slots_for(&self, tag: &str) -> &[String] {
        self.slots
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, k)| k.as_slice())
            .unwrap_or(&[])
    }

    /// Domain-specific rows take precedence over shared ones.
    pub fn key_row(&self, key: &str, domain: Option<&Domain>) -> Option<&KeyRow> {
        let mut candidates = self.keys.iter().filter(|r| r.key == key && r.applies_in(domain));
        let first = candidates.next()?;
        if first.domain.is_some() {
            return Some(first);
        }
        Some(candidates.find(|r| r.domain.is_some()).unwrap_or(first))
    }

    pub fn mark_row(&self, mark: char, domain: Option<&Domain>) -> Option<&KeyRow> {
        let rows = || self.keys.iter().filter(|r| r.mark == Some(mark) && r.applies_in(domain));
        rows().find(|r| r.domain.is_some()).or_else(|| rows().next())
    }

    pub fn expand_value(&self, code: &str) -> Option<&str> {
        lookup(&self.values, code)
    }

    pub fn value_code(&self, canonical: &str) -> Option<&str> {
        reverse(&self.values, canonical)
    }

    pub fn expand_subject(&self, code: &str) -> Option<&str> {
        lookup(&self.subjects, code)
    }

    pub fn subject_code(&self, canonical: &str) -> Option<&str> {
        reverse(&self.subjects, canonical)
    }
}

fn lookup<'a>(table: &'a [(String, String)], code: &str) -> Option<&'a str> {
    table.iter().find(|(c, _)| c == code).map(|(_, v)| v.as_str())
}

fn reverse<'a>(table: &'a [(String, String)], canonical: &str) -> Option<&'a str> {
    table.iter().find(|(_, v)| v == canonical).map(|(c, _)| c.as_str())
}

impl FromStr for Grammar {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Grammar::parse(s)
    }
}
