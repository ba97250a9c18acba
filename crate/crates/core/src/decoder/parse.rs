//! Turning decoder responses back into atoms.
//!
//! Tolerant mode strips code fences and surrounding prose and looks for the
//! first complete JSON object carrying an `"atoms"` key. Strict mode demands
//! that the trimmed response is exactly one such object. In both modes each
//! atom is checked on its own and invalid atoms are dropped and counted; the
//! whole output fails only when no usable object is found.

use serde_json::{Map, Value as Json};

use crate::atom::{validate_atom, AtomType, Modality, Predicate, Scope, SemanticAtom, Value};
use crate::normalize::normalize_text;

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutput {
    pub atoms: Vec<SemanticAtom>,
    /// One reason per dropped atom, in input order.
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseFailure {
    #[error("no JSON object with an `atoms` key found")]
    NoObject,
    #[error("response is not a single JSON object: {0}")]
    NotStrict(String),
    #[error("`atoms` is not an array")]
    AtomsNotArray,
}

pub fn parse_decoder_output(raw: &str, strict: bool) -> Result<ParsedOutput, ParseFailure> {
    let object = if strict {
        match serde_json::from_str::<Json>(raw.trim()) {
            Ok(Json::Object(map)) if map.contains_key("atoms") => map,
            Ok(_) => return Err(ParseFailure::NoObject),
            Err(e) => return Err(ParseFailure::NotStrict(e.to_string())),
        }
    } else {
        locate_object(&strip_fences(raw)).ok_or(ParseFailure::NoObject)?
    };
    let Some(Json::Array(items)) = object.get("atoms") else {
        return Err(ParseFailure::AtomsNotArray);
    };
    let mut out = ParsedOutput {
        atoms: Vec::new(),
        dropped: Vec::new(),
    };
    for (i, item) in items.iter().enumerate() {
        match atom_from_json(item) {
            Ok(a) => out.atoms.push(a),
            Err(reason) => out.dropped.push(format!("atoms[{i}]: {reason}")),
        }
    }
    Ok(out)
}

/// Removes Markdown fence lines (```` ``` ```` or ```` ```json ````).
fn strip_fences(raw: &str) -> String {
    raw.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// First `{` from which a complete JSON object with an `atoms` key parses.
fn locate_object(text: &str) -> Option<Map<String, Json>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Json>();
        if let Some(Ok(Json::Object(map))) = stream.next() {
            if map.contains_key("atoms") {
                return Some(map);
            }
        }
    }
    None
}

fn atom_from_json(item: &Json) -> Result<SemanticAtom, String> {
    let obj = item.as_object().ok_or("not an object")?;
    let text = |key: &str| -> Result<&str, String> {
        obj.get(key)
            .and_then(Json::as_str)
            .map(str::trim)
            .ok_or_else(|| format!("missing or non-string `{key}`"))
    };
    let atom_type: AtomType = text("type")?.to_ascii_lowercase().parse().map_err(|e| format!("{e}"))?;
    let predicate: Predicate = text("predicate")?.to_ascii_lowercase().parse().map_err(|e| format!("{e}"))?;
    // modality and scope have an `unknown` member to fall back on
    let modality = obj
        .get("modality")
        .and_then(Json::as_str)
        .and_then(|s| s.trim().to_ascii_lowercase().parse().ok())
        .unwrap_or(Modality::Unknown);
    let scope = obj
        .get("scope")
        .and_then(Json::as_str)
        .and_then(|s| s.trim().to_ascii_lowercase().parse().ok())
        .unwrap_or(Scope::Unknown);
    let subject = normalize_text(text("subject")?);
    let value = match obj.get("value") {
        Some(Json::String(s)) => Value::Text(s.clone()),
        Some(Json::Bool(b)) => Value::Bool(*b),
        Some(Json::Number(n)) => Value::Number(n.as_f64().ok_or("number out of range")?),
        Some(Json::Array(items)) => Value::List(
            items
                .iter()
                .map(|v| match v {
                    Json::String(s) => Ok(s.clone()),
                    Json::Bool(b) => Ok(b.to_string()),
                    Json::Number(n) => Ok(n.to_string()),
                    _ => Err("list items must be scalars".to_string()),
                })
                .collect::<Result<_, _>>()?,
        ),
        Some(Json::Null) | None => return Err("missing `value`".into()),
        Some(Json::Object(_)) => return Err("`value` is an object".into()),
    };
    let mut atom = SemanticAtom::new(atom_type, subject, predicate, value, modality, scope);
    atom.evidence = obj.get("evidence").and_then(Json::as_str).map(str::to_string);
    atom.confidence = obj.get("confidence").and_then(Json::as_f64).filter(|c| (0.0..=1.0).contains(c));
    atom.risk = obj
        .get("risk")
        .and_then(Json::as_str)
        .and_then(|s| s.trim().to_ascii_lowercase().parse().ok());
    let report = validate_atom(&atom);
    if !report.is_ok() {
        return Err(format!("{report}"));
    }
    Ok(atom)
}
