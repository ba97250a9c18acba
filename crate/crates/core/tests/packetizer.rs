mod common;

use proptest::prelude::*;
use semzip::atom::{AtomType, Modality, Predicate, Risk, Scope, SemanticAtom, Value};
use semzip::case::load_case_set;
use semzip::packet::{build_packet, classify, parse_packet, Channel, PacketError, Rule};

fn atom(t: AtomType, s: &str, p: Predicate, v: Value, m: Modality) -> SemanticAtom {
    SemanticAtom::new(t, s, p, v, m, Scope::Task)
}

/// Independent restatement of the must-protect conditions.
fn must_be_protected(a: &SemanticAtom) -> bool {
    let negation = a.predicate == Predicate::Allowed
        && match &a.value {
            Value::Bool(b) => !b,
            Value::Text(t) => matches!(t.trim().to_ascii_lowercase().as_str(), "false" | "no" | "0"),
            _ => false,
        };
    let numeric = match &a.value {
        Value::Number(_) => true,
        Value::Text(t) => t.trim().chars().next().is_some_and(|c| c.is_ascii_digit()),
        _ => false,
    };
    a.atom_type == AtomType::Safety || a.risk == Some(Risk::High) || numeric || negation
}

fn published_protected() -> Vec<SemanticAtom> {
    vec![
        atom(AtomType::Constraint, "rental_car", Predicate::Allowed, Value::Bool(false), Modality::Must),
        atom(AtomType::Safety, "allergy", Predicate::Equals, Value::list(["peanuts", "severe"]), Modality::Must)
            .with_risk(Risk::High),
        atom(AtomType::Constraint, "budget_max", Predicate::Equals, Value::text("1200_EUR"), Modality::Must),
    ]
}

fn entries(block: &str) -> Vec<String> {
    let body = block.strip_prefix("@SAFE{").and_then(|b| b.strip_suffix('}')).expect("safe block");
    let mut e: Vec<String> = body.split(';').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    e.sort();
    e
}

#[test]
fn published_safe_listing_is_reproduced_up_to_order() {
    let mut atoms = published_protected();
    for v in ["walking", "local_food", "bookstores", "viewpoints"] {
        atoms.push(
            SemanticAtom::new(AtomType::Preference, "activity_style", Predicate::Includes, Value::text(v), Modality::Should, Scope::Trip)
                .with_risk(Risk::Low),
        );
    }
    let packet = build_packet(&atoms, None).unwrap();
    assert_eq!(
        entries(&packet.safe_block),
        entries("@SAFE{rental_car:false; allergy:peanuts,severe; budget_max:1200_EUR}")
    );
    assert!(packet.szip_block.starts_with("@SZIP{"));
    assert_eq!(packet.lossy.len(), 4);
    let (protected, payload) = parse_packet(&packet.text()).unwrap();
    assert_eq!(protected, packet.protected);
    assert_eq!(format!("@SZIP{{{payload}}}"), packet.szip_block);
}

#[test]
fn classification_examples() {
    let d = classify(&atom(AtomType::Safety, "allergy", Predicate::Equals, Value::text("peanuts_severe"), Modality::Must));
    assert_eq!(d.channel, Channel::Protected);
    assert!(d.triggered_rules.contains(&Rule::SafetyType));

    let d = classify(&atom(AtomType::Preference, "activity_style", Predicate::Includes, Value::text("bookstores"), Modality::Should));
    assert_eq!(d.channel, Channel::Lossy);
    assert!(d.triggered_rules.contains(&Rule::LowRiskPreference));

    let d = classify(&atom(AtomType::Decision, "hotel_area", Predicate::Equals, Value::text("baixa"), Modality::Unknown));
    assert!(d.ambiguous);
    assert_eq!(d.channel, Channel::Protected);
}

#[test]
fn degenerate_packets() {
    let all_protected = build_packet(&published_protected(), None).unwrap();
    assert_eq!(all_protected.szip_block, "@SZIP{}");
    assert_eq!(all_protected.protected.len(), 3);

    let empty = build_packet(&[], None).unwrap();
    assert_eq!(empty.safe_block, "@SAFE{}");
    assert_eq!(empty.szip_block, "@SZIP{}");
}

#[test]
fn parse_examples() {
    let (atoms, payload) = parse_packet("@SAFE{budget_max:1200_EUR}").unwrap();
    assert_eq!(atoms, vec![atom(AtomType::Constraint, "budget_max", Predicate::Equals, Value::text("1200_EUR"), Modality::Must)]);
    assert!(payload.is_empty());

    let (atoms, payload) = parse_packet("@SZIP{@TRIP P:walk}").unwrap();
    assert!(atoms.is_empty());
    assert_eq!(payload, "@TRIP P:walk");

    // newline-tolerant, trailing separators
    let (atoms, _) = parse_packet("@SAFE{\n  rental_car:false;\n  allergy:peanuts,severe;\n}").unwrap();
    assert_eq!(atoms.len(), 2);
    assert_eq!(atoms[1].atom_type, AtomType::Safety);
    assert_eq!(atoms[1].risk, Some(Risk::High));

    assert!(matches!(parse_packet("@SAFE{a:1; a:2}"), Err(PacketError::DuplicateSubject(s)) if s == "a"));
    assert!(matches!(parse_packet("@SAFE{a:1"), Err(PacketError::UnbalancedBraces { .. })));
}

#[test]
fn bundled_cases_packetize_and_round_trip() {
    let set = load_case_set(&common::dataset_dir()).unwrap();
    for case in &set.cases {
        let atoms: Vec<SemanticAtom> = case.gold_atoms.iter().map(|g| g.atom.clone()).collect();
        let packet = build_packet(&atoms, None).unwrap();
        assert_eq!(packet.protected.len() + packet.lossy.len(), atoms.len());
        let (protected, _) = parse_packet(&packet.text()).unwrap();
        assert_eq!(protected, packet.protected, "{}", case.case_id);
    }
}

// ---- randomized ------------------------------------------------------------

const SUBJECTS: &[&str] = &[
    "activity_style", "hotel_area", "budget_max", "allergy", "theme", "tone", "rental_car",
    "user_email", "widgets", "zeta", "frame_rate", "sections", "blob_x",
];

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![
        "[a-z_]{1,10}".prop_map(Value::Text),
        "[ -~]{0,12}".prop_map(Value::Text),
        any::<bool>().prop_map(Value::Bool),
        prop_oneof![Just(0.0), Just(-2.5), Just(1e21), (0u32..10000).prop_map(f64::from)].prop_map(Value::Number),
        prop::collection::vec("[a-z0-9_ ;,|]{0,6}", 0..4).prop_map(Value::List),
        Just(Value::text("no")),
        Just(Value::text("12_kg")),
    ]
}

fn random_atom() -> impl Strategy<Value = SemanticAtom> {
    (
        prop::sample::select(AtomType::ALL),
        prop::sample::select(SUBJECTS),
        prop::sample::select(Predicate::ALL),
        value(),
        prop::sample::select(Modality::ALL),
        prop::sample::select(Scope::ALL),
        prop::option::of(prop::sample::select(Risk::ALL)),
        prop::option::of("[ -~]{0,10}"),
        prop::option::of(prop_oneof![Just(0.5), Just(1.0), Just(0.125)]),
    )
        .prop_map(|(t, s, p, v, m, sc, risk, evidence, confidence)| {
            let mut a = SemanticAtom::new(t, s, p, v, m, sc);
            a.risk = risk;
            a.evidence = evidence;
            a.confidence = confidence;
            a
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn conservative_classification(a in random_atom()) {
        let d = classify(&a);
        if must_be_protected(&a) {
            prop_assert_eq!(d.channel, Channel::Protected, "{:?}", a);
        }
        if d.ambiguous {
            prop_assert_eq!(d.channel, Channel::Protected);
        } else {
            prop_assert!(!d.triggered_rules.is_empty());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn partition_and_lossless_safe_channel(atoms in prop::collection::vec(random_atom(), 0..10)) {
        match build_packet(&atoms, None) {
            Ok(packet) => {
                prop_assert_eq!(packet.protected.len() + packet.lossy.len(), atoms.len());
                for (d, a) in packet.decisions.iter().zip(&atoms) {
                    if must_be_protected(a) {
                        prop_assert_eq!(&d.channel, &Channel::Protected);
                    }
                }
                let (protected, _) = parse_packet(&packet.text()).unwrap();
                prop_assert_eq!(protected, packet.protected);
            }
            Err(PacketError::NotExpressible { subject, .. }) => {
                // only atoms sharing a subject with differing fields are refused
                let same: Vec<&SemanticAtom> = atoms.iter().filter(|a| a.subject == subject).collect();
                prop_assert!(same.len() > 1);
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}
