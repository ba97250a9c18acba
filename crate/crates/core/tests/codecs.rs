mod common;

use proptest::prelude::*;
use semzip::atom::{AtomType, Modality, Predicate, Scope, SemanticAtom, Value};
use semzip::case::{load_case_set, CaseSet, Regime};
use semzip::codec::{
    amortization_break_even, parse_dictionary, parse_symbolic, render, Codec, CodecError,
    DictError,
};
use semzip::normalize::{normalize_atom, AliasTable};

fn bundled() -> CaseSet {
    load_case_set(&common::dataset_dir()).expect("bundled dataset loads")
}

/// Sorted normalized keys; compares two atom lists as multisets.
fn keys(atoms: &[SemanticAtom]) -> Vec<String> {
    let table = AliasTable::builtin();
    let mut k: Vec<String> = atoms
        .iter()
        .map(|a| {
            let n = normalize_atom(a, &table);
            format!(
                "{}|{}|{}|{:?}|{}|{}",
                n.atom_type, n.subject, n.predicate, n.value, n.modality, n.scope
            )
        })
        .collect();
    k.sort();
    k
}

fn atom(t: AtomType, s: &str, p: Predicate, v: Value, m: Modality, sc: Scope) -> SemanticAtom {
    SemanticAtom::new(t, s, p, v, m, sc)
}

const TRIP_DICT_LISTING: &str = "@DICT/TRIP: D=days; $mod=moderate_budget; d2d=day_by_day; rain=rainy_day_alternatives; !car=avoid_rental_car";

#[test]
fn ccl_min_header_fragment_parses_to_recorded_atoms() {
    let got = parse_symbolic("@C1 T=trip DEST=LIS D=4", Regime::CclMin, None).unwrap();
    let expected = vec![
        atom(AtomType::Goal, "task", Predicate::Equals, Value::text("travel_plan"), Modality::Must, Scope::Task),
        atom(AtomType::Entity, "destination", Predicate::Equals, Value::text("lisbon"), Modality::Must, Scope::Trip),
        atom(AtomType::Constraint, "duration_days", Predicate::Equals, Value::Number(4.0), Modality::Must, Scope::Trip),
    ];
    assert_eq!(got, expected);
}

#[test]
fn szip_negation_is_a_rental_car_refusal() {
    let got = parse_symbolic("!car", Regime::SzipAscii, None).unwrap();
    assert_eq!(
        got,
        vec![atom(AtomType::Constraint, "rental_car", Predicate::Allowed, Value::Bool(false), Modality::Must, Scope::Task)]
    );
}

#[test]
fn ccl_core_task_header() {
    let got = parse_symbolic("@CCL/1 TASK=travel.plan", Regime::CclCore, None).unwrap();
    assert_eq!(
        got,
        vec![atom(AtomType::Goal, "task", Predicate::Equals, Value::text("travel_plan"), Modality::Must, Scope::Task)]
    );
}

#[test]
fn travel_renderings_carry_published_segments() {
    let set = bundled();
    let travel = set.get("travel").expect("travel case");
    let atoms: Vec<SemanticAtom> = travel.gold_atoms.iter().map(|g| g.atom.clone()).collect();

    let min = render(&atoms, Regime::CclMin, None).unwrap();
    assert!(min.payload.starts_with("@C1 T=trip DEST=LIS D=4"), "{}", min.payload);
    assert!(min.decodable);

    let szip = render(&atoms, Regime::SzipAscii, None).unwrap();
    let segments: Vec<&str> = szip.payload.split_whitespace().collect();
    assert!(segments.iter().any(|s| s.starts_with("P:walk")), "{}", szip.payload);
    assert!(segments.contains(&"!car"), "{}", szip.payload);

    let emoji = render(&atoms, Regime::SzipEmoji, None).unwrap();
    assert!(!emoji.decodable);
    assert!(!render(&atoms, Regime::Prose, None).unwrap().decodable);
}

#[test]
fn empty_preference_set_drops_the_p_segment() {
    let set = bundled();
    let travel = set.get("travel").unwrap();
    let atoms: Vec<SemanticAtom> = travel
        .gold_atoms
        .iter()
        .map(|g| g.atom.clone())
        .filter(|a| a.atom_type != AtomType::Preference)
        .collect();
    for regime in [Regime::CclMin, Regime::SzipAscii] {
        let payload = render(&atoms, regime, None).unwrap().payload;
        assert!(
            !payload.split_whitespace().any(|s| s.starts_with("P:") || s.starts_with("P=")),
            "{regime}: {payload}"
        );
    }
}

#[test]
fn evidence_span_is_a_render_error_naming_the_atom() {
    let a = atom(AtomType::Constraint, "budget_max", Predicate::Equals, Value::text("1200_EUR"), Modality::Must, Scope::Trip)
        .with_evidence("no more than 1200 euros");
    match render(&[a], Regime::SzipAscii, None) {
        Err(CodecError::Render { subject, .. }) => assert_eq!(subject, "budget_max"),
        other => panic!("expected render error, got {other:?}"),
    }
}

#[test]
fn bundled_cases_round_trip_in_every_decodable_regime() {
    let set = bundled();
    for case in &set.cases {
        let atoms: Vec<SemanticAtom> = case.gold_atoms.iter().map(|g| g.atom.clone()).collect();
        for regime in Regime::DECODABLE {
            let dict = case
                .representation(regime)
                .and_then(|r| r.dictionary_id.as_deref())
                .and_then(|id| set.dictionary(id));
            let payload = render(&atoms, regime, dict).unwrap().payload;
            let back = parse_symbolic(&payload, regime, dict).unwrap();
            assert_eq!(keys(&back), keys(&atoms), "{} / {regime}: {payload}", case.case_id);
        }
    }
}

#[test]
fn stored_representations_match_the_renderer() {
    let set = bundled();
    let stored: usize = set.cases.iter().map(|c| c.representations.len()).sum();
    assert_eq!(stored, 30, "every case stores all six regimes");
    for case in &set.cases {
        let atoms: Vec<SemanticAtom> = case.gold_atoms.iter().map(|g| g.atom.clone()).collect();
        for (regime, rep) in &case.representations {
            let dict = rep.dictionary_id.as_deref().and_then(|id| set.dictionary(id));
            let fresh = render(&atoms, *regime, dict).unwrap().payload;
            assert_eq!(fresh, rep.payload, "{} / {regime}", case.case_id);
        }
    }
}

#[test]
fn rendering_is_deterministic() {
    let set = bundled();
    for case in &set.cases {
        let atoms: Vec<SemanticAtom> = case.gold_atoms.iter().map(|g| g.atom.clone()).collect();
        for regime in Regime::ALL {
            let a = render(&atoms, regime, None).unwrap().payload;
            let b = Codec::new(AliasTable::builtin()).render(&atoms, regime, None).unwrap().payload;
            assert_eq!(a, b, "{} / {regime}", case.case_id);
        }
    }
}

#[test]
fn compactness_is_monotone_under_o200k() {
    let vocab = common::o200k();
    let set = bundled();
    for case in &set.cases {
        let atoms: Vec<SemanticAtom> = case.gold_atoms.iter().map(|g| g.atom.clone()).collect();
        let count = |r: Regime| vocab.count(&render(&atoms, r, None).unwrap().payload);
        let chain = [
            count(Regime::CanonicalStructured),
            count(Regime::CclCore),
            count(Regime::CclMin),
            count(Regime::SzipAscii),
        ];
        assert!(chain.windows(2).all(|w| w[0] >= w[1]), "{}: {chain:?}", case.case_id);
    }
}

#[test]
fn undefined_dictionary_code_is_reported() {
    let dict = parse_dictionary(TRIP_DICT_LISTING).unwrap();
    match parse_symbolic("@TRIP B:$lux", Regime::SzipAscii, Some(&dict)) {
        Err(CodecError::UndefinedCode { code }) => assert_eq!(code, "$lux"),
        other => panic!("expected undefined code, got {other:?}"),
    }
    assert!(matches!(
        parse_symbolic("@TRIP B:$mod", Regime::SzipAscii, None),
        Err(CodecError::UndefinedCode { .. })
    ));
}

#[test]
fn dictionary_codes_expand_before_atom_construction() {
    let dict = parse_dictionary(TRIP_DICT_LISTING).unwrap();
    let atoms = parse_symbolic("@TRIP LIS/4d/Oct.early/$mod", Regime::SzipAscii, Some(&dict)).unwrap();
    assert!(atoms.iter().any(|a| a.subject == "budget_level" && a.value == Value::text("moderate_budget")));
}

#[test]
fn unknown_segments_and_unbalanced_braces_are_errors() {
    assert!(matches!(
        parse_symbolic("@CCL/1 ZZZ=1", Regime::CclCore, None),
        Err(CodecError::UnknownSegment { .. })
    ));
    assert!(matches!(
        parse_symbolic("@CCL/1 P={walk,food", Regime::CclCore, None),
        Err(CodecError::UnbalancedBraces { .. })
    ));
    assert!(matches!(
        parse_symbolic("x", Regime::Prose, None),
        Err(CodecError::NotDecodable(Regime::Prose))
    ));
}

#[test]
fn published_dictionary_listing() {
    let dict = parse_dictionary(TRIP_DICT_LISTING).unwrap();
    assert_eq!(dict.domain, "TRIP");
    assert_eq!(dict.len(), 5);
    assert_eq!(dict.expand("rain"), Some("rainy_day_alternatives"));
    assert_eq!(dict.expand("$mod"), Some("moderate_budget"));
    // the rendered header re-parses to the same dictionary
    assert_eq!(parse_dictionary(&dict.header_text).unwrap(), dict);
    assert_eq!(parse_dictionary(&format!("{TRIP_DICT_LISTING};\n")).unwrap().len(), 5);
}

#[test]
fn dictionary_errors_and_degenerate_cases() {
    assert!(matches!(parse_dictionary("@DICT/X: a=b; a=c"), Err(DictError::DuplicateCode(_))));
    assert!(matches!(parse_dictionary("@DICT/X: a"), Err(DictError::MissingEquals { .. })));
    assert!(matches!(parse_dictionary("DICT/X: a=b"), Err(DictError::MissingPrefix)));
    let empty = parse_dictionary("@DICT/X:").unwrap();
    assert!(empty.is_empty());
}

#[test]
fn bundled_dictionaries_are_bijective() {
    let set = bundled();
    for dict in set.dictionaries.values() {
        let mut seen = std::collections::BTreeSet::new();
        for e in &dict.entries {
            assert!(seen.insert(e.expansion.clone()), "{}: {}", dict.dictionary_id, e.expansion);
        }
    }
}

#[test]
fn break_even_examples() {
    assert_eq!(amortization_break_even(50, 10).unwrap(), 6);
    assert_eq!(amortization_break_even(0, 10).unwrap(), 1);
    assert_eq!(amortization_break_even(50, 50).unwrap(), 2);
    assert!(matches!(amortization_break_even(50, 0), Err(DictError::NeverAmortizes(0))));
    assert!(matches!(amortization_break_even(50, -3), Err(DictError::NeverAmortizes(-3))));
}


// ---- randomized round trips ------------------------------------------------

const WORDS: &[&str] = &[
    "alpha", "budget", "walk", "lisbon", "chart", "grid", "code", "test", "max", "days", "car",
    "ui", "dark", "mode", "csv", "null", "plan", "entry", "zeta", "x", "report", "python",
];

fn snake() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..=3).prop_map(|w| w.join("_"))
}

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![
        snake().prop_map(Value::Text),
        any::<bool>().prop_map(Value::Bool),
        (0u32..5000).prop_map(|n| Value::Number(n as f64)),
        (0u32..1000, 1u32..100).prop_map(|(a, b)| Value::Number(a as f64 + b as f64 / 100.0)),
        prop::collection::vec(snake(), 0..4).prop_map(Value::List),
        snake().prop_map(|s| Value::Text(format!("{s} {s}!"))),
    ]
}

fn semantic_atom() -> impl Strategy<Value = SemanticAtom> {
    (
        prop::sample::select(AtomType::ALL),
        snake(),
        prop::sample::select(Predicate::ALL),
        value(),
        prop::sample::select(Modality::ALL),
        prop::sample::select(Scope::ALL),
    )
        .prop_map(|(t, s, p, v, m, sc)| SemanticAtom::new(t, s, p, v, m, sc))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn random_expressible_atoms_round_trip(atoms in prop::collection::vec(semantic_atom(), 0..12)) {
        for regime in Regime::DECODABLE {
            let payload = render(&atoms, regime, None).unwrap().payload;
            let again = render(&atoms, regime, None).unwrap().payload;
            prop_assert_eq!(&payload, &again);
            let back = parse_symbolic(&payload, regime, None)
                .map_err(|e| TestCaseError::fail(format!("{regime}: {e}: {payload}")))?;
            prop_assert_eq!(keys(&back), keys(&atoms), "{}: {}", regime, payload);
        }
    }
}
