use std::collections::BTreeSet;

use proptest::prelude::*;
use semzip::atom::{AtomType, GoldAtom, Modality, Predicate, Scope, SemanticAtom, Value};
use semzip::matching::{
    match_prepared, prepare_decoded, prepare_gold, similarity, MatchReport, SimilarityWeights, DEFAULT_SWEEP,
};
use semzip::normalize::{normalize_atom, AliasTable};

fn atom() -> impl Strategy<Value = SemanticAtom> {
    let token = prop::sample::select(vec!["alpha", "beta", "gamma", "d2d", "day_by_day"]);
    let value = prop_oneof![
        any::<bool>().prop_map(Value::Bool),
        (0u8..3).prop_map(|n| Value::Number(f64::from(n))),
        token.clone().prop_map(Value::text),
        prop::collection::vec(token.prop_map(String::from), 0..4).prop_map(Value::List),
    ];
    (
        prop::sample::select(vec![AtomType::Constraint, AtomType::Preference]),
        prop::sample::select(vec!["budget", "theme", "libs", "external_libraries"]),
        prop::sample::select(vec![Predicate::Equals, Predicate::Includes]),
        value,
        prop::sample::select(vec![Scope::Task, Scope::Trip]),
    )
        .prop_map(|(t, s, p, v, sc)| SemanticAtom::new(t, s, p, v, Modality::Must, sc))
}

fn gold() -> impl Strategy<Value = Vec<GoldAtom>> {
    prop::collection::vec((atom(), 1u8..=5, any::<bool>()), 1..7).prop_map(|v| {
        let mut g: Vec<GoldAtom> = v
            .into_iter()
            .map(|(atom, criticality, is_critical)| GoldAtom { atom, criticality, is_critical })
            .collect();
        g[0].is_critical = true;
        g
    })
}

fn pairs(r: &MatchReport) -> BTreeSet<(usize, usize)> {
    r.pairs.iter().map(|p| (p.gold, p.decoded)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn raising_the_threshold_only_removes_pairs(g in gold(), d in prop::collection::vec(atom(), 0..7)) {
        let table = AliasTable::builtin();
        let w = SimilarityWeights::default();
        let (g, d) = (prepare_gold(&g, &table), prepare_decoded(&d, &table));
        let reports: Vec<MatchReport> = DEFAULT_SWEEP.iter().map(|&t| match_prepared(&g, &d, t, &w).unwrap()).collect();
        for pair in reports.windows(2) {
            let (lo, hi) = (&pair[0], &pair[1]);
            prop_assert!(pairs(hi).is_subset(&pairs(lo)));
            prop_assert!(hi.car <= lo.car && hi.war <= lo.war);
        }
    }

    #[test]
    fn war_equals_car_under_equal_weights(
        g in gold(),
        d in prop::collection::vec(atom(), 0..7),
        weight in 1u8..=5,
        t in prop::sample::select(DEFAULT_SWEEP.to_vec()),
    ) {
        let table = AliasTable::builtin();
        let g: Vec<GoldAtom> = g.into_iter().map(|x| GoldAtom { criticality: weight, ..x }).collect();
        let r = match_prepared(&prepare_gold(&g, &table), &prepare_decoded(&d, &table), t, &SimilarityWeights::default()).unwrap();
        prop_assert!((r.war - r.car).abs() < 1e-12);
    }

    #[test]
    fn similarity_is_bounded_and_reflexive(a in atom(), b in atom()) {
        let table = AliasTable::builtin();
        let (a, b) = (normalize_atom(&a, &table), normalize_atom(&b, &table));
        let w = SimilarityWeights::default();
        let s = similarity(&a, &b, &w);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(similarity(&a, &a, &w), 1.0);
        prop_assert_eq!(s, similarity(&b, &a, &w));
    }

    #[test]
    fn decoded_order_is_irrelevant_without_ties(
        g in gold(),
        d in prop::collection::vec(atom(), 0..7),
        seed in any::<u64>(),
        t in prop::sample::select(DEFAULT_SWEEP.to_vec()),
    ) {
        let table = AliasTable::builtin();
        let w = SimilarityWeights::default();
        let (g, d) = (prepare_gold(&g, &table), prepare_decoded(&d, &table));
        let sims: Vec<f64> = g.iter().flat_map(|x| d.iter().map(|y| similarity(&x.atom, y, &w))).collect();
        let distinct: BTreeSet<u64> = sims.iter().map(|s| s.to_bits()).collect();
        if distinct.len() != sims.len() {
            return Ok(()); // exact ties are where list order legitimately decides
        }

        let mut shuffled = d.clone();
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = match_prepared(&g, &d, t, &w).unwrap();
        let b = match_prepared(&g, &shuffled, t, &w).unwrap();
        prop_assert_eq!((a.car, a.war, a.precision), (b.car, b.war, b.precision));
    }
}
