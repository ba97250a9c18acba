//! Semantic atoms: the typed commitment records every other module exchanges.
//!
//! An atom is the tuple (type, subject, predicate, value, modality, scope,
//! evidence, confidence, risk). Gold atoms additionally carry an integer
//! criticality weight in `1..=5` and a flag marking membership in the
//! critical subset that recall metrics are computed over.

use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

macro_rules! vocabulary_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownVariant;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(UnknownVariant {
                        field: stringify!($name),
                        value: s.to_string(),
                    }),
                }
            }
        }
    };
}

/// A string did not name any member of a fixed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {field} value `{value}`")]
pub struct UnknownVariant {
    pub field: &'static str,
    pub value: String,
}

vocabulary_enum!(
    /// Atom type, in the decoder schema's fixed order.
    AtomType {
        Constraint => "constraint",
        Goal => "goal",
        Entity => "entity",
        Preference => "preference",
        Decision => "decision",
        Procedure => "procedure",
        Output => "output",
        Safety => "safety",
    }
);

vocabulary_enum!(
    Predicate {
        Equals => "equals",
        Allowed => "allowed",
        Required => "required",
        Preferred => "preferred",
        Includes => "includes",
    }
);

vocabulary_enum!(
    Modality {
        Must => "must",
        Should => "should",
        May => "may",
        Unknown => "unknown",
    }
);

vocabulary_enum!(
    Scope {
        Task => "task",
        Output => "output",
        Artifact => "artifact",
        Trip => "trip",
        Code => "code",
        Unknown => "unknown",
    }
);

vocabulary_enum!(
    Risk {
        Low => "low",
        Medium => "medium",
        High => "high",
    }
);

/// Tagged scalar stored as entered. Canonical comparison forms live in
/// [`crate::normalize`].
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    Bool(bool),
    Number(f64),
    List(Vec<String>),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn list<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Value::List(items.into_iter().map(Into::into).collect())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Value::Text(_) => "text",
            Value::Bool(_) => "boolean",
            Value::Number(_) => "number",
            Value::List(_) => "list",
        }
    }
}

/// Shortest round-trip rendering; integral values print without a fraction.
pub fn format_number(n: f64) -> String {
    if n == 0.0 {
        // collapse -0
        return "0".to_string();
    }
    format!("{n}")
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(n) => f.write_str(&format_number(*n)),
            Value::List(items) => f.write_str(&items.join(",")),
        }
    }
}

const MAX_EXACT_INT: f64 = 9_007_199_254_740_992.0;

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Text(s) => serializer.serialize_str(s),
            Value::Bool(b) => serializer.serialize_bool(*b),
            Value::Number(n) => {
                if n.fract() == 0.0 && n.abs() < MAX_EXACT_INT {
                    serializer.serialize_i64(*n as i64)
                } else {
                    serializer.serialize_f64(*n)
                }
            }
            Value::List(items) => {
                let mut seq = serializer.serialize_seq(Some(items.len()))?;
                for item in items {
                    seq.serialize_element(item)?;
                }
                seq.end()
            }
        }
    }
}

struct ValueVisitor;

impl<'de> Visitor<'de> for ValueVisitor {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a string, boolean, number, or list of strings")
    }

    fn visit_bool<E: de::Error>(self, v: bool) -> Result<Value, E> {
        Ok(Value::Bool(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Value, E> {
        Ok(Value::Number(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Value, E> {
        Ok(Value::Number(v as f64))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Value, E> {
        Ok(Value::Number(v))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Value, E> {
        Ok(Value::Text(v.to_string()))
    }

    fn visit_string<E: de::Error>(self, v: String) -> Result<Value, E> {
        Ok(Value::Text(v))
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Value, A::Error> {
        let mut items = Vec::new();
        while let Some(item) = seq.next_element::<ListElement>()? {
            items.push(item.0);
        }
        Ok(Value::List(items))
    }
}

/// List elements are text; decoders occasionally emit numbers or booleans
/// inside arrays, which are kept in their textual form.
struct ListElement(String);

impl<'de> Deserialize<'de> for ListElement {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match Value::deserialize(deserializer)? {
            Value::List(_) => Err(de::Error::custom("nested lists are not allowed in atom values")),
            other => Ok(ListElement(other.to_string())),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(ValueVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticAtom {
    #[serde(rename = "type")]
    pub atom_type: AtomType,
    pub subject: String,
    pub predicate: Predicate,
    pub value: Value,
    pub modality: Modality,
    pub scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<Risk>,
}

impl SemanticAtom {
    /// Atom with the optional evidence/confidence/risk fields absent.
    pub fn new(
        atom_type: AtomType,
        subject: impl Into<String>,
        predicate: Predicate,
        value: Value,
        modality: Modality,
        scope: Scope,
    ) -> Self {
        SemanticAtom {
            atom_type,
            subject: subject.into(),
            predicate,
            value,
            modality,
            scope,
            evidence: None,
            confidence: None,
            risk: None,
        }
    }

    pub fn with_risk(mut self, risk: Risk) -> Self {
        self.risk = Some(risk);
        self
    }

    pub fn with_evidence(mut self, evidence: impl Into<String>) -> Self {
        self.evidence = Some(evidence.into());
        self
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }
}

/// A gold atom with its author-assigned weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "GoldAtomDoc", into = "GoldAtomDoc")]
pub struct GoldAtom {
    pub atom: SemanticAtom,
    pub criticality: u8,
    pub is_critical: bool,
}

/// Flat on-disk shape of a gold atom; every key is explicit.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldAtomDoc {
    #[serde(rename = "type")]
    atom_type: AtomType,
    subject: String,
    predicate: Predicate,
    value: Value,
    modality: Modality,
    scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    evidence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    risk: Option<Risk>,
    criticality: u8,
    critical: bool,
}

impl From<GoldAtomDoc> for GoldAtom {
    fn from(d: GoldAtomDoc) -> Self {
        GoldAtom {
            atom: SemanticAtom {
                atom_type: d.atom_type,
                subject: d.subject,
                predicate: d.predicate,
                value: d.value,
                modality: d.modality,
                scope: d.scope,
                evidence: d.evidence,
                confidence: d.confidence,
                risk: d.risk,
            },
            criticality: d.criticality,
            is_critical: d.critical,
        }
    }
}

impl From<GoldAtom> for GoldAtomDoc {
    fn from(g: GoldAtom) -> Self {
        let a = g.atom;
        GoldAtomDoc {
            atom_type: a.atom_type,
            subject: a.subject,
            predicate: a.predicate,
            value: a.value,
            modality: a.modality,
            scope: a.scope,
            evidence: a.evidence,
            confidence: a.confidence,
            risk: a.risk,
            criticality: g.criticality,
            critical: g.is_critical,
        }
    }
}

impl GoldAtom {
    pub fn new(atom: SemanticAtom, criticality: u8, is_critical: bool) -> Self {
        GoldAtom {
            atom,
            criticality,
            is_critical,
        }
    }
}

/// One broken rule, named by field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Outcome of validating an atom, gold atom, or case. Empty means ok.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, field: impl Into<String>, rule: impl Into<String>) {
        self.violations.push(Violation::new(field, rule));
    }

    /// Append another report's violations with their fields prefixed.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ValidationReport) {
        for v in other.violations {
            self.violations
                .push(Violation::new(format!("{prefix}.{}", v.field), v.rule));
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

/// True when `s` is a nonempty run of lowercase ASCII letters, digits, and underscores.
pub fn is_snake_case(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

pub fn validate_atom(atom: &SemanticAtom) -> ValidationReport {
    let mut report = ValidationReport::default();
    if atom.subject.is_empty() {
        report.push("subject", "must be nonempty");
    } else if !is_snake_case(&atom.subject) {
        report.push(
            "subject",
            "not snake_case (lowercase letters, digits, underscore only)",
        );
    }
    match &atom.value {
        Value::Text(s) if s.trim().is_empty() => report.push("value", "text value is empty"),
        Value::Number(n) if !n.is_finite() => report.push("value", "number is not finite"),
        Value::List(items) => {
            if items.iter().any(|item| item.trim().is_empty()) {
                report.push("value", "list contains an empty element");
            }
        }
        _ => {}
    }
    if let Some(c) = atom.confidence {
        if !(0.0..=1.0).contains(&c) {
            report.push("confidence", "out of range [0, 1]");
        }
    }
    if let Some(e) = &atom.evidence {
        if e.trim().is_empty() {
            report.push("evidence", "present but empty");
        }
    }
    report
}

pub fn validate_gold_atom(gold: &GoldAtom) -> ValidationReport {
    let mut report = validate_atom(&gold.atom);
    if !(1..=5).contains(&gold.criticality) {
        report.push("criticality", "must be an integer in 1..=5");
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rental_car() -> SemanticAtom {
        SemanticAtom::new(
            AtomType::Constraint,
            "rental_car",
            Predicate::Allowed,
            Value::Bool(false),
            Modality::Must,
            Scope::Trip,
        )
    }

    #[test]
    fn rental_car_constraint_is_valid() {
        assert!(validate_atom(&rental_car()).is_ok());
    }

    #[test]
    fn spaced_subject_is_rejected() {
        let mut atom = rental_car();
        atom.subject = "Rental Car".into();
        let report = validate_atom(&atom);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].field, "subject");
        assert!(report.violations[0].rule.contains("snake_case"));
    }

    #[test]
    fn confidence_out_of_range() {
        let atom = rental_car().with_confidence(1.5);
        let report = validate_atom(&atom);
        assert_eq!(report.violations, vec![Violation::new("confidence", "out of range [0, 1]")]);
    }

    #[test]
    fn criticality_bounds() {
        for (w, ok) in [(0u8, false), (1, true), (5, true), (6, false), (7, false)] {
            let report = validate_gold_atom(&GoldAtom::new(rental_car(), w, true));
            assert_eq!(report.is_ok(), ok, "criticality {w}");
        }
    }

    #[test]
    fn enumerations_match_decoder_schema_order() {
        let types: Vec<&str> = AtomType::ALL.iter().map(|t| t.as_str()).collect();
        assert_eq!(
            types.join("|"),
            "constraint|goal|entity|preference|decision|procedure|output|safety"
        );
        let preds: Vec<&str> = Predicate::ALL.iter().map(|t| t.as_str()).collect();
        assert_eq!(preds.join("|"), "equals|allowed|required|preferred|includes");
        let mods: Vec<&str> = Modality::ALL.iter().map(|t| t.as_str()).collect();
        assert_eq!(mods.join("|"), "must|should|may|unknown");
        let scopes: Vec<&str> = Scope::ALL.iter().map(|t| t.as_str()).collect();
        assert_eq!(scopes.join("|"), "task|output|artifact|trip|code|unknown");
    }

    #[test]
    fn value_json_shapes() {
        let v: Value = serde_json::from_str("[\"a\", 3, true]").unwrap();
        assert_eq!(v, Value::list(["a", "3", "true"]));
        assert_eq!(serde_json::to_string(&Value::Number(4.0)).unwrap(), "4");
        assert_eq!(serde_json::to_string(&Value::Number(0.5)).unwrap(), "0.5");
        assert!(serde_json::from_str::<Value>("[[\"a\"]]").is_err());
    }

    #[test]
    fn number_formatting_round_trips() {
        for n in [0.0, -0.0, 4.0, 1200.0, 0.1, -3.25, 1e21, 1e-7] {
            let s = format_number(n);
            assert_eq!(s.parse::<f64>().unwrap(), if n == 0.0 { 0.0 } else { n }, "{s}");
            assert!(!s.contains('e'), "{s}");
        }
    }
}
