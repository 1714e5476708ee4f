mod common;

use learnprof_core::dataset::{first_attempts, last_chapter_histogram, ClassFilter, ReaderClass, ResponseSet};
use proptest::prelude::*;

use common::rec;

fn records() -> impl Strategy<Value = Vec<learnprof_core::dataset::ResponseRecord>> {
    prop::collection::vec((0u128..12, 0u128..8, 1u32..4, 0i64..50, 0u8..=1, 0u32..3), 1..80).prop_map(
        |rows| {
            rows.into_iter()
                .map(|(r, q, ch, t, s, attempt)| {
                    let mut x = rec(r, q * 10 + u128::from(ch), ch, t, s);
                    x.attempt = attempt;
                    x
                })
                .collect()
        },
    )
}

proptest! {
    #[test]
    fn first_attempts_idempotent_and_drops_retries(recs in records()) {
        let rs = ResponseSet::new(recs, [1, 2, 3]);
        let once = first_attempts(&rs);
        let twice = first_attempts(&once);
        prop_assert_eq!(once.records(), twice.records());
        prop_assert!(once.records().iter().all(|r| r.attempt == 0));
        let mut pairs: Vec<_> = once.records().iter().map(|r| (r.session_id, r.question_id)).collect();
        let n = pairs.len();
        pairs.sort();
        pairs.dedup();
        prop_assert_eq!(pairs.len(), n);
    }

    #[test]
    fn classification_ignores_record_order(recs in records(), k in 0usize..80) {
        let a = ResponseSet::new(recs.clone(), [1, 2, 3]);
        let mut rotated = recs;
        let n = rotated.len();
        rotated.rotate_left(k % n);
        let b = ResponseSet::new(rotated, [1, 2, 3]);
        prop_assert_eq!(a.threshold(), b.threshold());
        let classes = |rs: &ResponseSet| rs.readers().values().map(|p| (p.session_id, p.class)).collect::<Vec<_>>();
        prop_assert_eq!(classes(&a), classes(&b));
    }

    #[test]
    fn histogram_is_a_distribution(recs in records()) {
        let rs = ResponseSet::new(recs, [1, 2, 3]);
        for filter in [ClassFilter::All, ClassFilter::Triers] {
            let h = last_chapter_histogram(&rs, filter);
            prop_assert!(h.values().all(|&f| f >= 0.0));
            let total: f64 = h.values().sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "{}", total);
        }
        let triers = rs.readers().values().filter(|p| p.class == ReaderClass::Trier).count();
        let dabblers = rs.readers().values().filter(|p| p.class == ReaderClass::Dabbler).count();
        prop_assert_eq!(triers + dabblers, rs.readers().len());
        prop_assert!(triers >= 1);
    }
}
