mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use censusflow::domain::{PageClass, RegisterDocument, RegisterPage};
use censusflow::household::{
    household_accuracy, merge_register, merge_register_with, MergeOptions,
};
use censusflow::label_codec::{generate_synthetic_register, SyntheticProfile};

fn list_register(seed: u64, pages: usize) -> RegisterDocument {
    let synth = generate_synthetic_register(seed, &SyntheticProfile::default(), pages).unwrap();
    RegisterDocument {
        register_id: format!("r{seed}"),
        pages: synth
            .pages
            .into_iter()
            .enumerate()
            .map(|(i, mut t)| {
                t.page_id = format!("p{i}");
                t.page_index = i;
                RegisterPage {
                    page_id: t.page_id.clone(),
                    class: PageClass::List,
                    transcript: Some(t),
                }
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_equals_concatenate_and_split(seed in any::<u64>(), pages in 1usize..6) {
        let doc = list_register(seed, pages);
        let merged = merge_register(&doc).unwrap();
        let got: Vec<_> = merged.households.iter().map(|h| h.members.clone()).collect();
        prop_assert_eq!(got, common::split_before_heads(&doc));
    }

    #[test]
    fn merge_is_a_partition(seed in any::<u64>(), pages in 1usize..6, gap in proptest::option::of(0usize..6)) {
        let mut doc = list_register(seed, pages);
        if let Some(g) = gap.filter(|g| *g < pages) {
            doc.pages[g].class = PageClass::Other;
            doc.pages[g].transcript = None;
        }
        for continue_across_gaps in [false, true] {
            let merged = merge_register_with(&doc, MergeOptions { continue_across_gaps }).unwrap();
            let positions: Vec<_> = merged.partition().into_iter().flatten().collect();
            let unique: BTreeSet<_> = positions.iter().cloned().collect();
            let total: usize = doc.pages.iter().flat_map(|p| &p.transcript).map(|t| t.records.len()).sum();
            prop_assert_eq!(positions.len(), total);
            prop_assert_eq!(unique.len(), total);
            prop_assert!((household_accuracy(&merged, &merged).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
