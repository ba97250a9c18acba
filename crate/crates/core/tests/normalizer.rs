use proptest::prelude::*;
use semzip::atom::{AtomType, Modality, Predicate, Scope, SemanticAtom, Value};
use semzip::normalize::{apply_aliases, normalize_atom, normalize_text, AliasTable, FieldClass};

/// Surface noise built from alias keys, case changes, separators and digits.
fn noisy() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        prop::sample::select(vec!["libs", "LIBS", "d2d", "Car", "walk", "lis", "requires", "yes", "NO", "0", "1", "42", "3.5"]).prop_map(String::from).boxed(),
        prop::sample::select(vec![" ", "-", "_", "!", ",", "|", "+", ".", "  ", "/"]).prop_map(String::from).boxed(),
        "[a-zA-Z0-9]{1,5}".boxed(),
        "\\PC{1,3}".boxed(),
    ];
    prop::collection::vec(piece, 0..6).prop_map(|p| p.concat())
}

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![
        noisy().prop_map(Value::Text),
        any::<bool>().prop_map(Value::Bool),
        (-10_000i32..10_000).prop_map(|n| Value::Number(f64::from(n) / 8.0)),
        prop::collection::vec(noisy(), 0..4).prop_map(Value::List),
    ]
}

fn atom() -> impl Strategy<Value = SemanticAtom> {
    (
        prop::sample::select(AtomType::ALL),
        noisy(),
        prop::sample::select(Predicate::ALL),
        value(),
        prop::sample::select(Modality::ALL),
        prop::sample::select(Scope::ALL),
    )
        .prop_map(|(t, s, p, v, m, sc)| SemanticAtom::new(t, s, p, v, m, sc))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn normalizing_twice_changes_nothing(a in atom()) {
        let table = AliasTable::builtin();
        let once = normalize_atom(&a, &table);
        prop_assert_eq!(normalize_atom(&once.to_atom(), &table), once);
    }

    #[test]
    fn normalization_is_deterministic(a in atom()) {
        let table = AliasTable::builtin();
        prop_assert_eq!(normalize_atom(&a, &table), normalize_atom(&a.clone(), &AliasTable::builtin()));
    }

    #[test]
    fn text_normal_form_is_a_fixed_point(s in "\\PC{0,24}") {
        let n = normalize_text(&s);
        prop_assert_eq!(normalize_text(&n), n.clone());
        prop_assert!(!n.starts_with('_') && !n.ends_with('_') && !n.contains("__"));
    }

    #[test]
    fn aliases_never_chain(s in noisy()) {
        let table = AliasTable::builtin();
        for class in [FieldClass::Subject, FieldClass::Predicate, FieldClass::Value] {
            let once = apply_aliases(&normalize_text(&s), &table, class);
            prop_assert_eq!(apply_aliases(&once, &table, class), once);
        }
    }
}

#[test]
fn shipped_aliases_are_closed() {
    let table = AliasTable::builtin();
    for class in [FieldClass::Subject, FieldClass::Predicate, FieldClass::Value] {
        for (_, canonical) in table.entries(class) {
            assert_eq!(apply_aliases(canonical, &table, class), canonical);
        }
    }
    assert_eq!(apply_aliases("libs", &table, FieldClass::Subject), "external_libraries");
    assert_eq!(apply_aliases("d2d", &table, FieldClass::Value), "day_by_day");
}
