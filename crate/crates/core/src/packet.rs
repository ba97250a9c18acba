//! Hybrid context packets: a lossless `@SAFE{...}` channel for atoms that must
//! survive exactly, and a lossy `@SZIP{...}` channel for predictable context.
//!
//! Classification is conservative. An atom goes to the lossy channel only when
//! no protection rule fires *and* an explicit lossy rule does; everything else,
//! including atoms that match neither kind of rule, is protected.
//!
//! # `@SAFE` entry grammar
//!
//! ```text
//! entry  = subject [ "(" field ("," field)* ")" ] ":" value ("|" value)*
//! field  = ("type"|"pred"|"mod"|"scope"|"risk"|"conf") "=" word | "ev=" json-string
//! value  = "true" | "false" | number | json-string | json-array
//!        | item "," [ item ("," item)* ]      ; a list
//!        | "[]"                               ; the empty list
//!        | text                               ; verbatim
//! ```
//!
//! Entries are separated by `;` or newlines. A field is written only when it
//! differs from the entry default: type `constraint` (or `safety` when the
//! subject matches a medical keyword), predicate `allowed` for booleans and
//! `equals` otherwise, modality `must`, scope `task`, risk `high` for safety
//! atoms and absent otherwise, no confidence, no evidence. All protected atoms
//! sharing a subject must share those fields; their values are joined by `|`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::atom::{format_number, AtomType, Modality, Predicate, Risk, Scope, SemanticAtom, Value};
use crate::codec::{Codec, CodecError, ProtocolDictionary};
use crate::case::Regime;
use crate::normalize::{normalize_value, AliasTable, NormValue};

pub const KEYWORDS_HEADER: &str = "semzip-keywords/1";
pub const DEFAULT_KEYWORDS: &str = include_str!("../assets/keywords/protected.keywords");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Protected,
    Lossy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    SafetyType,
    HighRisk,
    NumericValue,
    Negation,
    SensitiveSubject,
    MustConstraint,
    SourceGrounded,
    Rare,
    LowRiskPreference,
    SoftModality,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::SafetyType => "safety-type",
            Rule::HighRisk => "high-risk",
            Rule::NumericValue => "numeric-value",
            Rule::Negation => "negation",
            Rule::SensitiveSubject => "sensitive-subject",
            Rule::MustConstraint => "must-constraint",
            Rule::SourceGrounded => "source-grounded",
            Rule::Rare => "rare",
            Rule::LowRiskPreference => "low-risk-preference",
            Rule::SoftModality => "soft-modality",
        }
    }

    pub fn protects(self) -> bool {
        !matches!(self, Rule::LowRiskPreference | Rule::SoftModality)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelDecision {
    /// Position of the atom in the classified input.
    pub index: usize,
    pub subject: String,
    pub channel: Channel,
    pub triggered_rules: Vec<Rule>,
    pub ambiguous: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum PacketError {
    #[error("keyword file line {line}: {message}")]
    Keywords { line: usize, message: String },
    #[error("protected atom {index} (`{subject}`) cannot be written to @SAFE: {reason}")]
    NotExpressible {
        index: usize,
        subject: String,
        reason: String,
    },
    #[error("lossy channel: {0}")]
    Lossy(#[from] CodecError),
    #[error("unbalanced braces in {block} block")]
    UnbalancedBraces { block: &'static str },
    #[error("more than one {block} block")]
    RepeatedBlock { block: &'static str },
    #[error("subject `{0}` appears in more than one @SAFE entry")]
    DuplicateSubject(String),
    #[error("malformed @SAFE entry `{entry}`: {reason}")]
    BadEntry { entry: String, reason: String },
}

/// Subject keyword lists.
#[derive(Debug, Clone, Default)]
pub struct KeywordTable {
    pub privacy: Vec<String>,
    pub legal: Vec<String>,
    pub medical: Vec<String>,
    pub common: Vec<String>,
    source: String,
}

impl KeywordTable {
    pub fn builtin() -> KeywordTable {
        KeywordTable::parse(DEFAULT_KEYWORDS).expect("bundled keyword file is valid")
    }

    pub fn parse(text: &str) -> Result<KeywordTable, PacketError> {
        let err = |line: usize, message: String| PacketError::Keywords { line, message };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim() == KEYWORDS_HEADER => {}
            _ => return Err(err(1, format!("expected header `{KEYWORDS_HEADER}`"))),
        }
        let mut table = KeywordTable {
            source: text.to_string(),
            ..KeywordTable::default()
        };
        let mut section: Option<String> = None;
        for (i, raw) in lines {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if !matches!(name, "privacy" | "legal" | "medical" | "common") {
                    return Err(err(i + 1, format!("unknown section `{name}`")));
                }
                section = Some(name.to_string());
                continue;
            }
            if !crate::atom::is_snake_case(line) {
                return Err(err(i + 1, format!("keyword `{line}` is not snake_case")));
            }
            let list = match section.as_deref() {
                Some("privacy") => &mut table.privacy,
                Some("legal") => &mut table.legal,
                Some("medical") => &mut table.medical,
                Some(_) => &mut table.common,
                None => return Err(err(i + 1, "keyword outside a section".into())),
            };
            list.push(line.to_string());
        }
        Ok(table)
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }

    pub fn is_sensitive(&self, subject: &str) -> bool {
        self.privacy
            .iter()
            .chain(&self.legal)
            .chain(&self.medical)
            .any(|k| keyword_matches(k, subject))
    }

    pub fn is_medical(&self, subject: &str) -> bool {
        self.medical.iter().any(|k| keyword_matches(k, subject))
    }

    pub fn is_common(&self, subject: &str) -> bool {
        self.common.iter().any(|k| k == subject)
    }
}

/// True when `keyword` equals a run of consecutive `_`-components of `subject`.
fn keyword_matches(keyword: &str, subject: &str) -> bool {
    let parts: Vec<&str> = subject.split('_').collect();
    let want: Vec<&str> = keyword.split('_').collect();
    parts.windows(want.len()).any(|w| w == want.as_slice())
}

/// Classifier and @SAFE codec.
#[derive(Debug, Clone)]
pub struct Packetizer {
    pub keywords: KeywordTable,
    pub aliases: AliasTable,
}

impl Default for Packetizer {
    fn default() -> Self {
        Packetizer {
            keywords: KeywordTable::builtin(),
            aliases: AliasTable::builtin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridPacket {
    pub safe_block: String,
    pub szip_block: String,
    pub decisions: Vec<ChannelDecision>,
    /// Protected atoms in @SAFE entry order.
    pub protected: Vec<SemanticAtom>,
    /// Lossy atoms in input order.
    pub lossy: Vec<SemanticAtom>,
}

impl HybridPacket {
    /// The two blocks on separate lines, the wire form.
    pub fn text(&self) -> String {
        format!("{}\n{}", self.safe_block, self.szip_block)
    }
}

impl Packetizer {
    pub fn classify(&self, atom: &SemanticAtom, dict: Option<&ProtocolDictionary>) -> ChannelDecision {
        self.classify_at(0, atom, dict)
    }

    fn classify_at(&self, index: usize, atom: &SemanticAtom, dict: Option<&ProtocolDictionary>) -> ChannelDecision {
        let norm = normalize_value(&atom.value, &self.aliases);
        let mut rules = Vec::new();
        if atom.atom_type == AtomType::Safety {
            rules.push(Rule::SafetyType);
        }
        if atom.risk == Some(Risk::High) {
            rules.push(Rule::HighRisk);
        }
        if is_numeric(&atom.value, &norm) {
            rules.push(Rule::NumericValue);
        }
        if atom.predicate == Predicate::Allowed && norm == NormValue::Bool(false) {
            rules.push(Rule::Negation);
        }
        if self.keywords.is_sensitive(&atom.subject) {
            rules.push(Rule::SensitiveSubject);
        }
        if atom.modality == Modality::Must && atom.atom_type == AtomType::Constraint {
            rules.push(Rule::MustConstraint);
        }
        if atom.evidence.as_deref().is_some_and(|e| !e.trim().is_empty()) {
            rules.push(Rule::SourceGrounded);
        }
        if !self.keywords.is_common(&atom.subject) && !in_dictionary(dict, &atom.subject) {
            rules.push(Rule::Rare);
        }
        let protected = !rules.is_empty();
        if atom.atom_type == AtomType::Preference && atom.risk != Some(Risk::High) {
            rules.push(Rule::LowRiskPreference);
        }
        if matches!(atom.modality, Modality::Should | Modality::May) {
            rules.push(Rule::SoftModality);
        }
        let ambiguous = rules.is_empty();
        ChannelDecision {
            index,
            subject: atom.subject.clone(),
            channel: if protected || ambiguous { Channel::Protected } else { Channel::Lossy },
            triggered_rules: rules,
            ambiguous,
        }
    }

    pub fn build_packet(
        &self,
        atoms: &[SemanticAtom],
        dict: Option<&ProtocolDictionary>,
        codec: &Codec,
    ) -> Result<HybridPacket, PacketError> {
        let decisions: Vec<ChannelDecision> = atoms
            .iter()
            .enumerate()
            .map(|(i, a)| self.classify_at(i, a, dict))
            .collect();
        let mut protected: Vec<(usize, &SemanticAtom)> = Vec::new();
        let mut lossy = Vec::new();
        for (d, a) in decisions.iter().zip(atoms) {
            match d.channel {
                Channel::Protected => protected.push((d.index, a)),
                Channel::Lossy => {
                    // a blank evidence span carries nothing the lossy codec could keep
                    let mut a = a.clone();
                    a.evidence = None;
                    lossy.push(a);
                }
            }
        }
        let (safe_body, protected) = self.render_safe(&protected)?;
        let szip = codec.render(&lossy, Regime::SzipAscii, dict)?.payload;
        Ok(HybridPacket {
            safe_block: format!("@SAFE{{{safe_body}}}"),
            szip_block: format!("@SZIP{{{szip}}}"),
            decisions,
            protected,
            lossy,
        })
    }

    fn render_safe(&self, atoms: &[(usize, &SemanticAtom)]) -> Result<(String, Vec<SemanticAtom>), PacketError> {
        let mut groups: BTreeMap<&str, Vec<(usize, &SemanticAtom)>> = BTreeMap::new();
        for &(i, a) in atoms {
            groups.entry(a.subject.as_str()).or_default().push((i, a));
        }
        let mut entries = Vec::new();
        let mut ordered = Vec::new();
        for (subject, members) in groups {
            let (first_index, first) = members[0];
            let fail = |index: usize, reason: String| PacketError::NotExpressible {
                index,
                subject: subject.to_string(),
                reason,
            };
            if !crate::atom::is_snake_case(subject) {
                return Err(fail(first_index, "subject is not snake_case".into()));
            }
            let annotation = self.annotation(first);
            let mut values = Vec::new();
            for &(i, a) in &members {
                if self.annotation(a) != annotation {
                    return Err(fail(
                        i,
                        "atoms sharing a subject must share type, predicate, modality, scope, risk, confidence and evidence".into(),
                    ));
                }
                values.push(render_safe_value(&a.value).map_err(|r| fail(i, r))?);
                ordered.push(a.clone());
            }
            let fields = if annotation.is_empty() {
                String::new()
            } else {
                format!("({})", annotation.join(","))
            };
            entries.push(format!("{subject}{fields}:{}", values.join("|")));
        }
        Ok((entries.join("; "), ordered))
    }

    /// Non-default fields for the entry holding `a`.
    fn annotation(&self, a: &SemanticAtom) -> Vec<String> {
        let defaults = self.defaults(&a.subject, &a.value);
        let mut out = Vec::new();
        if a.atom_type != defaults.atom_type {
            out.push(format!("type={}", a.atom_type));
        }
        if a.predicate != defaults.predicate {
            out.push(format!("pred={}", a.predicate));
        }
        if a.modality != Modality::Must {
            out.push(format!("mod={}", a.modality));
        }
        if a.scope != Scope::Task {
            out.push(format!("scope={}", a.scope));
        }
        let default_risk = (a.atom_type == AtomType::Safety).then_some(Risk::High);
        if a.risk != default_risk {
            out.push(format!("risk={}", a.risk.map_or("none", |r| r.as_str())));
        }
        if let Some(c) = a.confidence {
            out.push(format!("conf={}", format_number(c)));
        }
        if let Some(e) = &a.evidence {
            out.push(format!("ev={}", serde_json::to_string(e).expect("string serializes")));
        }
        out
    }

    fn defaults(&self, subject: &str, value: &Value) -> Defaults {
        Defaults {
            atom_type: if self.keywords.is_medical(subject) {
                AtomType::Safety
            } else {
                AtomType::Constraint
            },
            predicate: if matches!(value, Value::Bool(_)) {
                Predicate::Allowed
            } else {
                Predicate::Equals
            },
        }
    }

    /// Split a packet into its protected atoms and the raw @SZIP payload.
    pub fn parse_packet(&self, text: &str) -> Result<(Vec<SemanticAtom>, String), PacketError> {
        let safe = find_block(text, "@SAFE")?;
        let szip = find_block(text, "@SZIP")?;
        let protected = match safe {
            Some(body) => self.parse_safe_body(body)?,
            None => Vec::new(),
        };
        Ok((protected, szip.map(|s| s.trim().to_string()).unwrap_or_default()))
    }

    fn parse_safe_body(&self, body: &str) -> Result<Vec<SemanticAtom>, PacketError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut atoms = Vec::new();
        for entry in split_top_level(body, &[';', '\n']) {
            let entry = entry.trim();
            if entry.is_empty() {
                continue;
            }
            let bad = |reason: &str| PacketError::BadEntry {
                entry: entry.to_string(),
                reason: reason.to_string(),
            };
            let (head, rest) = split_head(entry).ok_or_else(|| bad("missing `:`"))?;
            let (subject, fields) = match head.split_once('(') {
                Some((s, f)) => (
                    s.trim(),
                    Some(f.strip_suffix(')').ok_or_else(|| bad("unclosed `(`"))?),
                ),
                None => (head.trim(), None),
            };
            if !crate::atom::is_snake_case(subject) {
                return Err(bad("subject is not snake_case"));
            }
            if !seen.insert(subject.to_string()) {
                return Err(PacketError::DuplicateSubject(subject.to_string()));
            }
            for raw_value in split_top_level(rest, &['|']) {
                let value = parse_safe_value(raw_value.trim()).map_err(|r| bad(&r))?;
                let d = self.defaults(subject, &value);
                let mut atom = SemanticAtom::new(d.atom_type, subject, d.predicate, value, Modality::Must, Scope::Task);
                let mut risk_set = false;
                for field in fields.map(|f| split_top_level(f, &[','])).unwrap_or_default() {
                    let (k, v) = field.split_once('=').ok_or_else(|| bad("annotation without `=`"))?;
                    let v = v.trim();
                    let unknown = |_| bad("unknown annotation value");
                    match k.trim() {
                        "type" => atom.atom_type = v.parse().map_err(unknown)?,
                        "pred" => atom.predicate = v.parse().map_err(unknown)?,
                        "mod" => atom.modality = v.parse().map_err(unknown)?,
                        "scope" => atom.scope = v.parse().map_err(unknown)?,
                        "risk" => {
                            risk_set = true;
                            atom.risk = if v == "none" { None } else { Some(v.parse().map_err(unknown)?) };
                        }
                        "conf" => atom.confidence = Some(v.parse().map_err(|_| bad("bad confidence"))?),
                        "ev" => atom.evidence = Some(serde_json::from_str(v).map_err(|_| bad("bad evidence string"))?),
                        _ => return Err(bad("unknown annotation key")),
                    }
                }
                if !risk_set && atom.atom_type == AtomType::Safety {
                    atom.risk = Some(Risk::High);
                }
                atoms.push(atom);
            }
        }
        Ok(atoms)
    }
}

struct Defaults {
    atom_type: AtomType,
    predicate: Predicate,
}

fn in_dictionary(dict: Option<&ProtocolDictionary>, subject: &str) -> bool {
    dict.is_some_and(|d| {
        d.entries.iter().any(|e| {
            e.expansion == subject || e.code == subject || d.negation_subject(&e.code).as_deref() == Some(subject)
        })
    })
}

/// Numbers, and text or list items that begin with a digit (`1200_EUR`, `$40`).
fn is_numeric(raw: &Value, norm: &NormValue) -> bool {
    let digit_led = |s: &str| {
        s.trim()
            .trim_start_matches(['-', '+', '$', '€', '£', '¥', '~'])
            .starts_with(|c: char| c.is_ascii_digit())
    };
    match (raw, norm) {
        (_, NormValue::Number(_)) => true,
        (Value::Text(s), _) => s.split([',', '|', '+']).any(digit_led),
        (Value::List(items), _) => items.iter().any(|s| digit_led(s)),
        _ => false,
    }
}

const SPECIAL: &[char] = &[',', ';', '|', '{', '}', '(', ')', '"', ':', '[', ']'];

fn needs_quotes(s: &str) -> bool {
    s.is_empty()
        || s.contains(SPECIAL)
        || s.chars().any(char::is_whitespace)
        || matches!(s, "true" | "false")
        || s.parse::<f64>().is_ok()
}

fn render_safe_value(v: &Value) -> Result<String, String> {
    Ok(match v {
        Value::Bool(b) => b.to_string(),
        Value::Number(n) if n.is_finite() => format_number(*n),
        Value::Number(n) => return Err(format!("non-finite number {n}")),
        Value::Text(s) if needs_quotes(s) => serde_json::to_string(s).expect("string serializes"),
        Value::Text(s) => s.clone(),
        Value::List(items) if items.is_empty() => "[]".into(),
        Value::List(items) if items.iter().any(|i| i.is_empty() || i.contains(SPECIAL) || i.chars().any(char::is_whitespace)) => {
            serde_json::to_string(items).expect("list serializes")
        }
        Value::List(items) if items.len() == 1 => format!("{},", items[0]),
        Value::List(items) => items.join(","),
    })
}

fn parse_safe_value(s: &str) -> Result<Value, String> {
    match s {
        "" => Err("empty value".into()),
        "true" => Ok(Value::Bool(true)),
        "false" => Ok(Value::Bool(false)),
        _ if s.starts_with('"') => serde_json::from_str(s).map(Value::Text).map_err(|e| e.to_string()),
        _ if s.starts_with('[') => serde_json::from_str(s).map(Value::List).map_err(|e| e.to_string()),
        _ if s.contains(',') => {
            let mut items: Vec<String> = s.split(',').map(|i| i.trim().to_string()).collect();
            if items.last().is_some_and(String::is_empty) {
                items.pop();
            }
            if items.iter().any(String::is_empty) {
                return Err("empty list item".into());
            }
            Ok(Value::List(items))
        }
        _ => Ok(s.parse::<f64>().map(Value::Number).unwrap_or_else(|_| Value::Text(s.to_string()))),
    }
}

/// Splits on any of `seps` outside quotes, brackets and parentheses.
fn split_top_level<'a>(s: &'a str, seps: &[char]) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut in_quote = false;
    let mut escaped = false;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        if in_quote {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_quote = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_quote = true,
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            _ if depth == 0 && seps.contains(&c) => {
                out.push(&s[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

/// Splits `subject(fields):values` at the first top-level `:`.
fn split_head(entry: &str) -> Option<(&str, &str)> {
    let parts = split_top_level(entry, &[':']);
    if parts.len() < 2 {
        return None;
    }
    let head = parts[0];
    Some((head, &entry[head.len() + 1..]))
}

/// Body of the single `tag{...}` block, if present. Quotes are respected.
fn find_block<'a>(text: &'a str, tag: &'static str) -> Result<Option<&'a str>, PacketError> {
    let opener = format!("{tag}{{");
    let Some(start) = text.find(&opener) else {
        return Ok(None);
    };
    let body_start = start + opener.len();
    let mut depth = 1;
    let mut in_quote = false;
    let mut escaped = false;
    let mut end = None;
    for (i, c) in text[body_start..].char_indices() {
        if in_quote {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_quote = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_quote = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    end = Some(body_start + i);
                    break;
                }
            }
            _ => {}
        }
    }
    let end = end.ok_or(PacketError::UnbalancedBraces { block: tag })?;
    if text[end + 1..].contains(&opener) {
        return Err(PacketError::RepeatedBlock { block: tag });
    }
    Ok(Some(&text[body_start..end]))
}

impl Packetizer {
    /// Bundled keyword file and alias table.
    pub fn builtin() -> &'static Packetizer {
        static P: OnceLock<Packetizer> = OnceLock::new();
        P.get_or_init(Packetizer::default)
    }
}

pub fn classify(atom: &SemanticAtom) -> ChannelDecision {
    Packetizer::builtin().classify(atom, None)
}

pub fn build_packet(atoms: &[SemanticAtom], dict: Option<&ProtocolDictionary>) -> Result<HybridPacket, PacketError> {
    Packetizer::builtin().build_packet(atoms, dict, Codec::builtin())
}

pub fn parse_packet(text: &str) -> Result<(Vec<SemanticAtom>, String), PacketError> {
    Packetizer::builtin().parse_packet(text)
}
