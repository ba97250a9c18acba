//! Canonical comparison forms for atom fields.
//!
//! Text is lowercased and every run of characters outside `[a-z0-9]`
//! (underscores included) collapses to a single `_`, with leading and trailing
//! separators dropped. Fixed points are therefore `[a-z0-9]+(_[a-z0-9]+)*`.
//! Aliases rewrite whole canonical tokens and are applied exactly once.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::atom::{AtomType, Modality, Predicate, Risk, Scope, SemanticAtom, Value};

pub const ALIAS_HEADER: &str = "aliases/1";

/// Table shipped with the crate; its hash is recorded in every run manifest.
pub const DEFAULT_ALIASES: &str = include_str!("../assets/aliases/default.aliases");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FieldClass {
    Subject,
    Predicate,
    Value,
}

impl FieldClass {
    fn section(self) -> &'static str {
        match self {
            FieldClass::Subject => "subjects",
            FieldClass::Predicate => "predicates",
            FieldClass::Value => "values",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AliasError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing `{ALIAS_HEADER}` header")]
    MissingHeader,
    #[error("line {line}: `{surface}` already mapped at line {first_line}")]
    Duplicate {
        line: usize,
        first_line: usize,
        surface: String,
    },
    #[error("line {line}: `{text}` is not a normalization fixed point (expected `{expected}`)")]
    NotCanonical {
        line: usize,
        text: String,
        expected: String,
    },
    #[error("{section}: `{surface}` -> `{canonical}` chains into another alias")]
    Chain {
        section: &'static str,
        surface: String,
        canonical: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    subjects: BTreeMap<String, String>,
    predicates: BTreeMap<String, String>,
    values: BTreeMap<String, String>,
}

impl AliasTable {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_ALIASES).expect("bundled alias table is valid")
    }

    fn section(&self, class: FieldClass) -> &BTreeMap<String, String> {
        match class {
            FieldClass::Subject => &self.subjects,
            FieldClass::Predicate => &self.predicates,
            FieldClass::Value => &self.values,
        }
    }

    fn section_mut(&mut self, class: FieldClass) -> &mut BTreeMap<String, String> {
        match class {
            FieldClass::Subject => &mut self.subjects,
            FieldClass::Predicate => &mut self.predicates,
            FieldClass::Value => &mut self.values,
        }
    }

    pub fn entries(&self, class: FieldClass) -> impl Iterator<Item = (&str, &str)> {
        self.section(class)
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.subjects.len() + self.predicates.len() + self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parse an `aliases/1` document:
    ///
    /// ```text
    /// aliases/1
    /// [subjects]
    /// libs = external_libraries
    /// [values]
    /// d2d = day_by_day
    /// ```
    ///
    /// `#` starts a comment. Both sides must already be canonical tokens.
    pub fn parse(text: &str) -> Result<Self, AliasError> {
        let mut table = AliasTable::default();
        let mut first_lines: BTreeMap<(FieldClass, String), usize> = BTreeMap::new();
        let mut section: Option<FieldClass> = None;
        let mut saw_header = false;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if !saw_header {
                if line != ALIAS_HEADER {
                    return Err(AliasError::MissingHeader);
                }
                saw_header = true;
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(match name.trim() {
                    "subjects" => FieldClass::Subject,
                    "predicates" => FieldClass::Predicate,
                    "values" => FieldClass::Value,
                    other => {
                        return Err(AliasError::Syntax {
                            line: line_no,
                            message: format!("unknown section `{other}`"),
                        })
                    }
                });
                continue;
            }
            let class = section.ok_or_else(|| AliasError::Syntax {
                line: line_no,
                message: "mapping outside of a section".into(),
            })?;
            let (surface, canonical) = line.split_once('=').ok_or_else(|| AliasError::Syntax {
                line: line_no,
                message: "expected `surface = canonical`".into(),
            })?;
            let (surface, canonical) = (surface.trim(), canonical.trim());
            for text in [surface, canonical] {
                let expected = normalize_text(text);
                if expected != text || text.is_empty() {
                    return Err(AliasError::NotCanonical {
                        line: line_no,
                        text: text.to_string(),
                        expected,
                    });
                }
            }
            if surface == canonical {
                return Err(AliasError::Syntax {
                    line: line_no,
                    message: format!("`{surface}` maps to itself"),
                });
            }
            let key = (class, surface.to_string());
            if let Some(&first_line) = first_lines.get(&key) {
                return Err(AliasError::Duplicate {
                    line: line_no,
                    first_line,
                    surface: surface.to_string(),
                });
            }
            first_lines.insert(key, line_no);
            table
                .section_mut(class)
                .insert(surface.to_string(), canonical.to_string());
        }
        if !saw_header {
            return Err(AliasError::MissingHeader);
        }
        table.check_closure()?;
        Ok(table)
    }

    fn check_closure(&self) -> Result<(), AliasError> {
        for class in [FieldClass::Subject, FieldClass::Predicate, FieldClass::Value] {
            let map = self.section(class);
            for (surface, canonical) in map {
                if map.contains_key(canonical) {
                    return Err(AliasError::Chain {
                        section: class.section(),
                        surface: surface.clone(),
                        canonical: canonical.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Render back to the `aliases/1` format; sections and keys sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::from(ALIAS_HEADER);
        out.push('\n');
        for class in [FieldClass::Subject, FieldClass::Predicate, FieldClass::Value] {
            out.push_str(&format!("[{}]\n", class.section()));
            for (k, v) in self.section(class) {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

impl FromStr for AliasTable {
    type Err = AliasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AliasTable::parse(s)
    }
}

/// Lowercase, drop punctuation, collapse separator runs to `_`.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_sep = false;
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

/// Exact-match substitution on a canonical token.
pub fn apply_aliases(s: &str, table: &AliasTable, class: FieldClass) -> String {
    match table.section(class).get(s) {
        Some(canonical) => canonical.clone(),
        None => s.to_string(),
    }
}

fn canonical_token(s: &str, table: &AliasTable, class: FieldClass) -> String {
    apply_aliases(&normalize_text(s), table, class)
}

/// Predicate surface form (e.g. `requires`) resolved through the alias table.
pub fn parse_predicate(s: &str, table: &AliasTable) -> Option<Predicate> {
    canonical_token(s, table, FieldClass::Predicate).parse().ok()
}

/// Comparison form of a value.
#[derive(Debug, Clone, PartialEq)]
pub enum NormValue {
    Token(String),
    Bool(bool),
    Number(f64),
    /// Sorted, deduplicated canonical tokens.
    List(Vec<String>),
}

impl NormValue {
    pub fn to_value(&self) -> Value {
        match self {
            NormValue::Token(t) => Value::Text(t.clone()),
            NormValue::Bool(b) => Value::Bool(*b),
            NormValue::Number(n) => Value::Number(*n),
            NormValue::List(items) => Value::List(items.clone()),
        }
    }
}

impl fmt::Display for NormValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_value(), f)
    }
}

const LIST_DELIMITERS: &[char] = &[',', '|', '+'];

fn is_decimal_literal(s: &str) -> bool {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()))
}

fn list_from<'a>(items: impl Iterator<Item = &'a str>, table: &AliasTable) -> NormValue {
    let mut tokens: Vec<String> = items
        .map(|item| canonical_token(item, table, FieldClass::Value))
        .filter(|t| !t.is_empty())
        .collect();
    tokens.sort();
    tokens.dedup();
    NormValue::List(tokens)
}

fn token_value(token: String) -> NormValue {
    match token.as_str() {
        "true" | "yes" | "1" => NormValue::Bool(true),
        "false" | "no" | "0" => NormValue::Bool(false),
        t if !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()) => {
            NormValue::Number(t.parse().expect("digit run parses"))
        }
        _ => NormValue::Token(token),
    }
}

pub fn normalize_value(v: &Value, table: &AliasTable) -> NormValue {
    match v {
        Value::Bool(b) => NormValue::Bool(*b),
        Value::Number(n) => NormValue::Number(if *n == 0.0 { 0.0 } else { *n }),
        Value::List(items) => list_from(items.iter().map(String::as_str), table),
        Value::Text(s) => {
            let trimmed = s.trim();
            if trimmed.contains(LIST_DELIMITERS) {
                return list_from(trimmed.split(LIST_DELIMITERS), table);
            }
            let token = canonical_token(trimmed, table, FieldClass::Value);
            if matches!(token.as_str(), "0" | "1") {
                return token_value(token);
            }
            if is_decimal_literal(trimmed) {
                let n: f64 = trimmed.parse().expect("decimal literal parses");
                return NormValue::Number(if n == 0.0 { 0.0 } else { n });
            }
            token_value(token)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAtom {
    pub atom_type: AtomType,
    pub subject: String,
    pub predicate: Predicate,
    pub value: NormValue,
    pub modality: Modality,
    pub scope: Scope,
    pub evidence: Option<String>,
    pub confidence: Option<f64>,
    pub risk: Option<Risk>,
}

impl NormalizedAtom {
    pub fn to_atom(&self) -> SemanticAtom {
        SemanticAtom {
            atom_type: self.atom_type,
            subject: self.subject.clone(),
            predicate: self.predicate,
            value: self.value.to_value(),
            modality: self.modality,
            scope: self.scope,
            evidence: self.evidence.clone(),
            confidence: self.confidence,
            risk: self.risk,
        }
    }

    /// The fields a symbolic rendering is expected to preserve.
    pub fn structural_key(&self) -> (AtomType, &str, Predicate, String, Modality, Scope) {
        (
            self.atom_type,
            &self.subject,
            self.predicate,
            format!("{:?}", self.value),
            self.modality,
            self.scope,
        )
    }
}

pub fn normalize_atom(a: &SemanticAtom, table: &AliasTable) -> NormalizedAtom {
    NormalizedAtom {
        atom_type: a.atom_type,
        subject: canonical_token(&a.subject, table, FieldClass::Subject),
        predicate: a.predicate,
        value: normalize_value(&a.value, table),
        modality: a.modality,
        scope: a.scope,
        evidence: a.evidence.clone(),
        confidence: a.confidence,
        risk: a.risk,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_rules() {
        assert_eq!(normalize_text("Rental-Car!"), "rental_car");
        assert_eq!(normalize_text("day_by_day"), "day_by_day");
        assert_eq!(normalize_text("  --x__y  "), "x_y");
        assert_eq!(normalize_text("!!!"), "");
        assert_eq!(normalize_text("Oct.early"), "oct_early");
    }

    #[test]
    fn pipe_separated_text_golden() {
        // frozen before the implementation: "|" and the surrounding spaces form one separator run
        assert_eq!(normalize_text("Baixa | Chiado"), "baixa_chiado");
    }

    #[test]
    fn published_aliases() {
        let table = AliasTable::builtin();
        assert_eq!(apply_aliases("libs", &table, FieldClass::Subject), "external_libraries");
        assert_eq!(apply_aliases("d2d", &table, FieldClass::Value), "day_by_day");
        assert_eq!(apply_aliases("sintra", &table, FieldClass::Value), "sintra");
    }

    #[test]
    fn value_rules() {
        let t = AliasTable::empty();
        assert_eq!(normalize_value(&Value::text("false"), &t), NormValue::Bool(false));
        assert_eq!(normalize_value(&Value::text("Yes"), &t), NormValue::Bool(true));
        assert_eq!(normalize_value(&Value::text("0"), &t), NormValue::Bool(false));
        assert_eq!(normalize_value(&Value::text("4"), &t), NormValue::Number(4.0));
        assert_eq!(normalize_value(&Value::text("-2.5"), &t), NormValue::Number(-2.5));
        assert_eq!(normalize_value(&Value::text("4!"), &t), NormValue::Number(4.0));
        assert_eq!(
            normalize_value(&Value::text("1200_EUR"), &t),
            NormValue::Token("1200_eur".into())
        );
        assert_eq!(
            normalize_value(&Value::text("a+b|c"), &t),
            NormValue::List(vec!["a".into(), "b".into(), "c".into()])
        );
    }

    #[test]
    fn comma_list_golden() {
        // frozen before the implementation: split, canonicalize, sort
        let t = AliasTable::empty();
        assert_eq!(
            normalize_value(&Value::text("walk,foodL,books,views"), &t),
            NormValue::List(vec!["books".into(), "foodl".into(), "views".into(), "walk".into()])
        );
    }

    #[test]
    fn external_libraries_example() {
        let table = AliasTable::builtin();
        let atom = SemanticAtom::new(
            AtomType::Constraint,
            "External_Libraries",
            Predicate::Allowed,
            Value::text("no"),
            Modality::Must,
            Scope::Code,
        );
        let n = normalize_atom(&atom, &table);
        assert_eq!(n.subject, "external_libraries");
        assert_eq!(n.predicate, Predicate::Allowed);
        assert_eq!(n.value, NormValue::Bool(false));
        assert_eq!(normalize_atom(&n.to_atom(), &table), n);
    }

    #[test]
    fn requires_predicate_alias() {
        let table = AliasTable::builtin();
        assert_eq!(parse_predicate("requires", &table), Some(Predicate::Required));
        assert_eq!(parse_predicate("Includes", &table), Some(Predicate::Includes));
        assert_eq!(parse_predicate("owns", &table), None);
        let atom = SemanticAtom::new(
            AtomType::Output,
            "itinerary",
            parse_predicate("requires", &table).unwrap(),
            Value::text("d2d"),
            Modality::Must,
            Scope::Output,
        );
        assert_eq!(
            normalize_atom(&atom, &table).value,
            NormValue::Token("day_by_day".into())
        );
    }

    #[test]
    fn alias_table_rejects_chains_and_duplicates() {
        let chain = "aliases/1\n[values]\na = b\nb = c\n";
        assert!(matches!(AliasTable::parse(chain), Err(AliasError::Chain { .. })));
        let dup = "aliases/1\n[values]\na = b\na = c\n";
        assert!(matches!(
            AliasTable::parse(dup),
            Err(AliasError::Duplicate { line: 4, first_line: 3, .. })
        ));
        let bad = "aliases/1\n[values]\nFoo = b\n";
        assert!(matches!(AliasTable::parse(bad), Err(AliasError::NotCanonical { .. })));
        assert_eq!(AliasTable::parse("[values]\n"), Err(AliasError::MissingHeader));
    }

    #[test]
    fn alias_text_round_trip() {
        let table = AliasTable::builtin();
        assert_eq!(AliasTable::parse(&table.to_text()).unwrap(), table);
    }
}
