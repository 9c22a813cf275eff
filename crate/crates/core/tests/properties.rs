mod common;

use std::collections::BTreeMap;

use biasprop::inject::{biased_conditional, estimate_delta, inject_bias, BiasSpec};
use biasprop::scan::{
    log_likelihood_ratio, optimize_attribute, score_subgroup, cells_from_records, AttributeMode,
    ScanData,
};
use biasprop::tabular::{
    build_profile_table, member_indices, read_csv, subgroup_members, to_csv_string, ColumnRoles,
    Dataset, Subgroup,
};
use biasprop::theory::theoretical_score;
use proptest::prelude::*;

use common::small_dataset;

fn group() -> impl Strategy<Value = Vec<(bool, f64)>> {
    prop::collection::vec((any::<bool>(), 0.01f64..0.99), 1..80)
}

fn subgroup_for(d: &Dataset) -> impl Strategy<Value = Subgroup> {
    let arities = d.schema.arities();
    arities
        .into_iter()
        .map(|a| prop::collection::vec(any::<bool>(), a))
        .collect::<Vec<_>>()
        .prop_map(|masks| {
            Subgroup::from_sets(
                masks
                    .into_iter()
                    .map(|m| (0..m.len() as u32).filter(|&v| m[v as usize]).collect())
                    .collect(),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn score_is_nonnegative_and_beats_grid(g in group()) {
        let eval = score_subgroup(&g);
        prop_assert!(eval.score >= 0.0);
        prop_assert!((0.0..=1.0).contains(&eval.q_hat));
        let cells = cells_from_records(&g);
        for k in 1..100 {
            let q = k as f64 / 100.0;
            prop_assert!(log_likelihood_ratio(&cells, q) <= eval.score + 1e-9);
        }
    }

    #[test]
    fn propagated_score_matches_rescored_group(g in group(), delta in 1.0f64..20.0) {
        prop_assume!(g.iter().any(|r| !r.0));
        let report = theoretical_score(&g, delta).unwrap();
        let shifted: Vec<(bool, f64)> = g
            .iter()
            .map(|&(y, p)| (y, biased_conditional(p, delta).unwrap()))
            .collect();
        let direct = score_subgroup(&shifted).score;
        if report.applicable {
            prop_assert!((direct - report.f_theo).abs() <= 1e-9 * direct.max(1.0));
        } else {
            prop_assert_eq!(report.f_theo, 0.0);
            prop_assert!(direct <= 1e-9);
        }
    }

    #[test]
    fn propagated_score_grows_with_delta(g in group(), a in 1.0f64..10.0, b in 1.0f64..10.0) {
        prop_assume!(g.iter().any(|r| !r.0));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let flo = theoretical_score(&g, lo).unwrap();
        let fhi = theoretical_score(&g, hi).unwrap();
        prop_assert!(fhi.f_theo + 1e-9 >= flo.f_theo);
    }

    #[test]
    fn delta_round_trip(p in 1e-3f64..0.999, delta in 1.0f64..50.0) {
        let pb = biased_conditional(p, delta).unwrap();
        prop_assert!((estimate_delta(pb, p).unwrap() - delta).abs() <= 1e-12 * delta.max(1.0) * 50.0);
    }

    #[test]
    fn biased_conditional_is_monotone(p in 0.01f64..0.98, dp in 1e-4f64..0.01, delta in 1.0f64..20.0, dd in 1e-3f64..1.0) {
        let base = biased_conditional(p, delta).unwrap();
        prop_assert!(base >= p);
        prop_assert!(biased_conditional(p + dp, delta).unwrap() > base);
        prop_assert!(biased_conditional(p, delta + dd).unwrap() > base);
    }

    #[test]
    fn csv_round_trip_is_byte_exact(d in small_dataset()) {
        let text = to_csv_string(&d).unwrap();
        let back = read_csv(text.as_bytes(), &ColumnRoles::default()).unwrap();
        prop_assert_eq!(to_csv_string(&back).unwrap(), text);
        prop_assert_eq!(back.len(), d.len());
    }

    #[test]
    fn profile_table_ignores_record_order(d in small_dataset(), seed in any::<u64>()) {
        let table = build_profile_table(&d).unwrap();
        prop_assert_eq!(table.total(), d.len() as u64);
        let mut shuffled = d.clone();
        let n = shuffled.records.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.records.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(build_profile_table(&shuffled).unwrap(), table);
    }

    #[test]
    fn members_and_complement_partition(
        (d, s) in small_dataset().prop_flat_map(|d| { let s = subgroup_for(&d); (Just(d), s) })
    ) {
        let inside = member_indices(&d, &s).unwrap();
        let outside = d.records.iter().filter(|r| !s.contains(&r.values)).count();
        prop_assert_eq!(inside.len() + outside, d.len());
        prop_assert_eq!(subgroup_members(&d, &s).unwrap().len(), inside.len());
    }

    #[test]
    fn injection_keeps_size_and_outsiders(
        (d, s) in small_dataset().prop_flat_map(|d| { let s = subgroup_for(&d); (Just(d), s) }),
        delta in 1.0f64..10.0,
        seed in any::<u64>(),
    ) {
        prop_assume!(!member_indices(&d, &s).unwrap().is_empty());
        let out = inject_bias(&d, &BiasSpec { target: s.clone(), delta, seed, profile_deltas: BTreeMap::new() }).unwrap();
        prop_assert_eq!(out.len(), d.len());
        for (a, b) in d.records.iter().zip(&out.records) {
            if s.contains(&a.values) {
                prop_assert!(s.contains(&b.values));
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ltss_matches_exhaustive_per_attribute(
        (d, s) in small_dataset().prop_flat_map(|d| { let s = subgroup_for(&d); (Just(d), s) }),
        j in 0usize..3,
    ) {
        let data = ScanData::from_dataset(&d).unwrap();
        let j = j % data.arities().len();
        let ltss = optimize_attribute(&data, &s, j, AttributeMode::Ltss).unwrap();
        let full = optimize_attribute(&data, &s, j, AttributeMode::Exhaustive).unwrap();
        prop_assert!((ltss.eval.score - full.eval.score).abs() <= 1e-9 * full.eval.score.max(1.0));
    }
}
