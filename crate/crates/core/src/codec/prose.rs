//! Template prose and canonical structured renderings.

use serde::Serialize;

use crate::atom::{format_number, AtomType, Modality, Predicate, SemanticAtom, Value};

/// Sentence groups, in output order.
const GROUPS: [(AtomType, &str); 8] = [
    (AtomType::Goal, "Goal"),
    (AtomType::Entity, "Context"),
    (AtomType::Constraint, "Constraints"),
    (AtomType::Safety, "Safety"),
    (AtomType::Decision, "Decisions"),
    (AtomType::Preference, "Preferences"),
    (AtomType::Procedure, "Method"),
    (AtomType::Output, "Output"),
];

fn words(s: &str) -> String {
    s.replace('_', " ")
}

fn value_words(v: &Value) -> String {
    match v {
        Value::Text(s) => words(s),
        Value::Bool(true) => "yes".into(),
        Value::Bool(false) => "no".into(),
        Value::Number(n) => format_number(*n),
        Value::List(items) => {
            let items: Vec<String> = items.iter().map(|s| words(s)).collect();
            match items.len() {
                0 => "nothing".into(),
                1 => items[0].clone(),
                n => format!("{} and {}", items[..n - 1].join(", "), items[n - 1]),
            }
        }
    }
}

fn clause(a: &SemanticAtom) -> String {
    let subject = words(&a.subject);
    let value = value_words(&a.value);
    let body = match (a.predicate, &a.value) {
        (Predicate::Allowed, Value::Bool(false)) => format!("no {subject}"),
        (Predicate::Allowed, Value::Bool(true)) => format!("{subject} allowed"),
        (Predicate::Allowed, _) => format!("{subject} allowed: {value}"),
        (Predicate::Equals, _) => format!("{subject} {value}"),
        (Predicate::Required, _) => format!("{subject} must cover {value}"),
        (Predicate::Preferred, _) => format!("{subject}: {value} preferred"),
        (Predicate::Includes, _) => format!("{subject} includes {value}"),
    };
    let hedge = match a.modality {
        Modality::Must => "",
        Modality::Should => "ideally ",
        Modality::May => "optionally ",
        Modality::Unknown => "possibly ",
    };
    let mut out = format!("{hedge}{body}");
    if let Some(e) = &a.evidence {
        out.push_str(&format!(" (source: \"{e}\")"));
    }
    out
}

/// One sentence per atom type, clauses in input order.
pub fn render_prose(atoms: &[SemanticAtom]) -> String {
    let mut sentences = Vec::new();
    for (ty, label) in GROUPS {
        let clauses: Vec<String> = atoms.iter().filter(|a| a.atom_type == ty).map(clause).collect();
        if !clauses.is_empty() {
            sentences.push(format!("{label}: {}.", clauses.join("; ")));
        }
    }
    sentences.join(" ")
}

#[derive(Serialize)]
struct StructuredAtom<'a> {
    #[serde(rename = "type")]
    atom_type: &'static str,
    subject: &'a str,
    predicate: &'static str,
    value: &'a Value,
    modality: &'static str,
    scope: &'static str,
}

#[derive(Serialize)]
struct StructuredDoc<'a> {
    atoms: Vec<StructuredAtom<'a>>,
}

/// Compact `{"atoms":[...]}` with the decoder schema's key order.
pub fn render_structured(atoms: &[SemanticAtom]) -> String {
    let doc = StructuredDoc {
        atoms: atoms
            .iter()
            .map(|a| StructuredAtom {
                atom_type: a.atom_type.as_str(),
                subject: &a.subject,
                predicate: a.predicate.as_str(),
                value: &a.value,
                modality: a.modality.as_str(),
                scope: a.scope.as_str(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("json renders")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::Scope;

    #[test]
    fn prose_groups_by_type() {
        let atoms = vec![
            SemanticAtom::new(AtomType::Constraint, "rental_car", Predicate::Allowed, Value::Bool(false), Modality::Must, Scope::Trip),
            SemanticAtom::new(AtomType::Goal, "task", Predicate::Equals, Value::text("travel_plan"), Modality::Must, Scope::Task),
            SemanticAtom::new(AtomType::Preference, "activity_style", Predicate::Includes, Value::text("bookstores"), Modality::Should, Scope::Trip),
        ];
        assert_eq!(
            render_prose(&atoms),
            "Goal: task travel plan. Constraints: no rental car. Preferences: ideally activity style includes bookstores."
        );
    }

    #[test]
    fn structured_key_order() {
        let atoms = vec![SemanticAtom::new(
            AtomType::Constraint,
            "duration_days",
            Predicate::Equals,
            Value::Number(4.0),
            Modality::Must,
            Scope::Trip,
        )];
        assert_eq!(
            render_structured(&atoms),
            r#"{"atoms":[{"type":"constraint","subject":"duration_days","predicate":"equals","value":4,"modality":"must","scope":"trip"}]}"#
        );
    }
}
