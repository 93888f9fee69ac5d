use std::collections::BTreeMap;

use proptest::prelude::*;

use censusflow::domain::{
    tag_from_token, validate_record, EntityTag, PageTranscript, PersonRecord,
};
use censusflow::label_codec::{decode_lenient_bytes, generate_synthetic_page, SyntheticProfile};
use censusflow::{decode_lenient, decode_strict, encode};

fn value() -> impl Strategy<Value = String> {
    "[A-Za-z0-9éèçàô'.,/ -]{1,14}"
        .prop_map(|s| s.trim().to_string())
        .prop_filter("non-empty", |s| !s.is_empty())
}

const OTHER_TAGS: [EntityTag; 10] = [
    EntityTag::Firstname,
    EntityTag::Occupation,
    EntityTag::Link,
    EntityTag::Employer,
    EntityTag::Age,
    EntityTag::Nationality,
    EntityTag::BirthDate,
    EntityTag::CivilStatus,
    EntityTag::Lob,
    EntityTag::Observation,
];

/// 0 = head, 1 = member with surname, 2 = member without surname.
fn record() -> impl Strategy<Value = PersonRecord> {
    (
        0..3u8,
        value(),
        proptest::collection::btree_map(0..OTHER_TAGS.len(), value(), 0..6),
    )
        .prop_filter_map("record needs a field", |(kind, surname, rest)| {
            let mut fields: Vec<(EntityTag, String)> =
                rest.into_iter().map(|(i, v)| (OTHER_TAGS[i], v)).collect();
            match kind {
                0 => fields.push((EntityTag::SurnameHead, surname)),
                1 => fields.push((EntityTag::Surname, surname)),
                _ => {}
            }
            (!fields.is_empty()).then(|| PersonRecord::from_fields(fields))
        })
}

fn page() -> impl Strategy<Value = PageTranscript> {
    proptest::collection::vec(record(), 0..12)
        .prop_map(|records| PageTranscript::new("", 0, records))
}

/// Fragments that make decoding interesting: tags, near-tags, separators.
fn soup() -> impl Strategy<Value = String> {
    let pieces = prop_oneof![
        Just("<s-h>".to_string()),
        Just("<s>".to_string()),
        Just("<f>".to_string()),
        Just("<a>".to_string()),
        Just("<x>".to_string()),
        Just("<q>".to_string()),
        Just("<".to_string()),
        Just(">".to_string()),
        Just(" ".to_string()),
        Just("\n".to_string()),
        Just("\r\n".to_string()),
        Just("\t".to_string()),
        "[a-zé]{1,4}",
    ];
    proptest::collection::vec(pieces, 0..40).prop_map(|v| v.concat())
}

#[test]
fn tag_surfaces_are_a_bijection() {
    let mut seen = BTreeMap::new();
    for t in EntityTag::ALL {
        assert_eq!(tag_from_token(t.surface()).unwrap(), t);
        assert!(seen.insert(t.surface(), t).is_none());
    }
}

#[test]
fn synthetic_pages_round_trip() {
    let profile = SyntheticProfile::default();
    for seed in 0..200 {
        let p = generate_synthetic_page(seed, &profile).unwrap();
        let back = decode_strict(&encode(&p).unwrap().text).unwrap();
        assert!(back.same_records(&p), "seed {seed}");
    }
}

proptest! {
    #[test]
    fn arbitrary_pages_round_trip(p in page()) {
        let label = encode(&p).unwrap();
        let back = decode_strict(&label.text).unwrap();
        prop_assert_eq!(&back.records, &p.records);
    }

    #[test]
    fn lenient_agrees_with_strict_when_strict_succeeds(p in page()) {
        let label = encode(&p).unwrap().text;
        let strict = decode_strict(&label).unwrap();
        let lenient = decode_lenient(&label);
        prop_assert_eq!(&lenient.transcript.records, &strict.records);
        prop_assert_eq!(lenient.repairs().count(), 0);
    }

    #[test]
    fn lenient_agrees_with_strict_on_soup(s in soup()) {
        if let Ok(strict) = decode_strict(&s) {
            let lenient = decode_lenient(&s);
            prop_assert_eq!(&lenient.transcript.records, &strict.records);
            prop_assert_eq!(lenient.repairs().count(), 0);
        }
    }

    #[test]
    fn field_insertion_order_is_irrelevant(p in page(), rot in 0usize..12) {
        let shuffled: Vec<PersonRecord> = p
            .records
            .iter()
            .map(|r| {
                let mut fields: Vec<(EntityTag, String)> = r.fields.iter().map(|(t, v)| (*t, v.clone())).collect();
                fields.reverse();
                let k = rot % fields.len();
                fields.rotate_left(k);
                PersonRecord::from_fields(fields)
            })
            .collect();
        let q = PageTranscript::new("", 0, shuffled);
        prop_assert_eq!(encode(&p).unwrap(), encode(&q).unwrap());
    }

    #[test]
    fn lenient_is_total_on_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        let report = decode_lenient_bytes(&bytes);
        for r in &report.transcript.records {
            prop_assert!(validate_record(r).is_empty(), "{:?}", r);
        }
    }

    #[test]
    fn lenient_is_total_on_soup(s in soup()) {
        let report = decode_lenient(&s);
        for r in &report.transcript.records {
            prop_assert!(validate_record(r).is_empty(), "{:?}", r);
        }
        for w in &report.warnings {
            prop_assert!(w.position >= 1 && w.position <= s.chars().count() + 1);
        }
    }

    #[test]
    fn strict_output_is_valid(s in soup()) {
        if let Ok(page) = decode_strict(&s) {
            for r in &page.records {
                prop_assert!(validate_record(r).is_empty());
            }
        }
    }
}
