mod common;

use proptest::prelude::*;

use censusflow::domain::{EntityTag, PageClass, PageTranscript, PersonRecord};
use censusflow::metrics::{
    char_distance, classification_report, edit_distance, entity_scores, text_error_rates,
};

#[test]
fn levenshtein_matches_search_oracle_up_to_length_5() {
    let g = common::EditGraph::new(b"abc", 5);
    for (i, a) in g.strings.iter().enumerate() {
        let dist = g.distances_from(i);
        for (j, b) in g.strings.iter().enumerate() {
            assert_eq!(edit_distance(a, b), dist[j] as usize, "{a:?} {b:?}");
        }
    }
}

#[test]
fn chef_chez() {
    assert_eq!(text_error_rates("chef", "chez").cer, 0.25);
}

fn tagged() -> impl Strategy<Value = Vec<(usize, String)>> {
    proptest::collection::vec((2usize..12, "[a-c]{1,3}"), 0..8)
}

fn page(fields: &[(usize, String)]) -> PageTranscript {
    let records = fields
        .iter()
        .map(|(t, v)| PersonRecord::from_fields([(EntityTag::ALL[*t], v.as_str())]))
        .collect();
    PageTranscript::new("p", 0, records)
}

proptest! {
    #[test]
    fn distance_is_symmetric(a in "\\PC{0,12}", b in "\\PC{0,12}") {
        prop_assert_eq!(char_distance(&a, &b), char_distance(&b, &a));
        prop_assert_eq!(char_distance(&a, &a), 0);
    }

    #[test]
    fn cer_of_identity_is_zero(a in "[a-z ]{1,30}") {
        prop_assert_eq!(text_error_rates(&a, &a).cer, 0.0);
    }

    #[test]
    fn distance_obeys_triangle_inequality(a in "[ab]{0,6}", b in "[ab]{0,6}", c in "[ab]{0,6}") {
        prop_assert!(char_distance(&a, &c) <= char_distance(&a, &b) + char_distance(&b, &c));
    }

    #[test]
    fn entity_f1_is_one_iff_sequences_are_equal(t in tagged(), p in tagged()) {
        let score = entity_scores(&page(&t), &page(&p));
        let f1 = score.total.f1();
        if t == p {
            prop_assert!(t.is_empty() || f1 == Some(1.0));
        } else {
            prop_assert!(f1 != Some(1.0), "{:?} vs {:?}: {:?}", t, p, f1);
        }
    }

    #[test]
    fn recall_is_diagonal_over_truth_total(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..60)) {
        let pairs: Vec<(PageClass, PageClass)> = pairs.iter().map(|&(t, p)| (PageClass::ALL[t], PageClass::ALL[p])).collect();
        let r = classification_report(&pairs);
        for c in PageClass::ALL {
            let truth = pairs.iter().filter(|(t, _)| *t == c).count();
            let hit = pairs.iter().filter(|(t, p)| *t == c && *p == c).count();
            let expected = (truth > 0).then(|| hit as f64 / truth as f64);
            prop_assert_eq!(r.class(c).recall, expected);
        }
    }
}
