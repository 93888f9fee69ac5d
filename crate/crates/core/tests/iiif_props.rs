use std::cell::RefCell;
use std::collections::BTreeSet;
use std::time::Duration;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use censusflow::iiif::{
    check_integrity_with, decode_identifier, ApiVersion, HttpResponse, IiifEndpoint,
    IntegrityStatus, MemoryTransport, RetryPolicy,
};
use censusflow::ingest::ImageRef;

fn image(id: &str) -> ImageRef {
    ImageRef {
        register_id: "r".into(),
        iiif_identifier: id.into(),
        image_path: "p".into(),
        sequence_index: 0,
        verified: false,
        width: None,
        height: None,
        source_row: 1,
    }
}

fn endpoint(v: ApiVersion) -> IiifEndpoint {
    IiifEndpoint::new("https://iiif.example/iiif/", v).unwrap()
}

proptest! {
    #[test]
    fn urls_are_injective(ids in proptest::collection::btree_set("\\PC{1,16}", 2..20)) {
        for v in [ApiVersion::V2, ApiVersion::V3] {
            let e = endpoint(v);
            let info: BTreeSet<String> = ids.iter().map(|i| e.info_url(i).unwrap()).collect();
            let full: BTreeSet<String> = ids.iter().map(|i| e.full_image_url(i).unwrap()).collect();
            prop_assert_eq!(info.len(), ids.len());
            prop_assert_eq!(full.len(), ids.len());
        }
    }

    #[test]
    fn identifier_segment_round_trips(id in "\\PC{1,24}") {
        let url = endpoint(ApiVersion::V2).info_url(&id).unwrap();
        let segment = url.trim_end_matches("/info.json").rsplit('/').next().unwrap();
        prop_assert!(!segment.contains('/'));
        prop_assert_eq!(decode_identifier(segment), id);
    }

    #[test]
    fn backoff_ceiling_is_non_decreasing(base_ms in 1u64..2000, seed in any::<u64>()) {
        let p = RetryPolicy { max_attempts: 8, base_backoff: Duration::from_millis(base_ms) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..8 {
            prop_assert!(p.backoff_ceiling(k) <= p.backoff_ceiling(k + 1));
            prop_assert!(p.jittered(k, &mut rng) <= p.backoff_ceiling(k));
        }
    }

    #[test]
    fn attempts_never_exceed_the_limit(max in 1u32..6, failures in 0usize..8) {
        let e = endpoint(ApiVersion::V2)
            .with_retry(RetryPolicy { max_attempts: max, base_backoff: Duration::from_millis(1) })
            .unwrap();
        let url = e.info_url("img").unwrap();
        let t = MemoryTransport::new();
        t.route(url.clone(), HttpResponse::ok(r#"{"width":10,"height":20}"#));
        t.fail_times(url, failures);
        let sleeps = RefCell::new(Vec::new());
        let r = check_integrity_with(&e, &image("img"), &t, &|d| sleeps.borrow_mut().push(d));
        prop_assert!(r.attempts <= max);
        prop_assert!(t.request_count() <= max as usize);
        prop_assert_eq!(sleeps.borrow().len() as u32, r.attempts.saturating_sub(1));
        if failures < max as usize {
            prop_assert_eq!(r.status, IntegrityStatus::Ok);
            prop_assert_eq!(r.attempts as usize, failures + 1);
        } else {
            prop_assert_eq!(r.status, IntegrityStatus::TransportError);
        }
    }

    #[test]
    fn server_errors_are_retried_up_to_the_limit(max in 1u32..6, status in prop_oneof![Just(500u16), Just(503), Just(429)]) {
        let e = endpoint(ApiVersion::V2)
            .with_retry(RetryPolicy { max_attempts: max, base_backoff: Duration::from_millis(1) })
            .unwrap();
        let t = MemoryTransport::new();
        t.route(e.info_url("img").unwrap(), HttpResponse::status(status));
        let r = check_integrity_with(&e, &image("img"), &t, &|_| {});
        prop_assert_eq!(r.status, IntegrityStatus::TransportError);
        prop_assert_eq!(r.attempts, max);
        prop_assert_eq!(t.request_count(), max as usize);
    }

    #[test]
    fn check_is_total_over_arbitrary_responses(status in 100u16..600, body in proptest::collection::vec(any::<u8>(), 0..64)) {
        let e = endpoint(ApiVersion::V3)
            .with_retry(RetryPolicy { max_attempts: 2, base_backoff: Duration::from_millis(1) })
            .unwrap();
        let t = MemoryTransport::new();
        t.route(e.info_url("x").unwrap(), HttpResponse { status, body });
        let r = check_integrity_with(&e, &image("x"), &t, &|_| {});
        prop_assert!(r.attempts >= 1 && r.attempts <= 2);
        prop_assert_eq!(r.status == IntegrityStatus::Ok, r.width.is_some() && r.height.is_some());
    }
}
