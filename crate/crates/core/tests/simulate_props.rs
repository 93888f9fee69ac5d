mod common;

use proptest::prelude::*;

use censusflow::simulate::{
    bottleneck_bound, min_workers_for_deadline, simulate, simulate_mode, single_image_latency,
    Mode, SearchOptions, ServiceTime, StageModel,
};

fn model() -> impl Strategy<Value = Vec<(f64, usize)>> {
    proptest::collection::vec((1u32..200, 1usize..6), 1..5).prop_map(|v| {
        v.into_iter()
            .map(|(t, c)| (f64::from(t) / 10.0, c))
            .collect()
    })
}

fn stages(m: &[(f64, usize)]) -> Vec<StageModel> {
    m.iter()
        .enumerate()
        .map(|(i, &(t, c))| StageModel::deterministic(format!("s{i}"), t, c))
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn pipelined_matches_departure_recursion(m in model(), n in 1usize..300) {
        let r = simulate(n, &stages(&m), 0).unwrap();
        prop_assert!(close(r.makespan, common::tandem_makespan(n, &m)), "{} vs {}", r.makespan, common::tandem_makespan(n, &m));
    }

    #[test]
    fn sequential_matches_batch_sum(m in model(), n in 1usize..300) {
        let r = simulate_mode(n, &stages(&m), 0, Mode::Sequential).unwrap();
        prop_assert!(close(r.makespan, common::sequential_makespan(n, &m)));
    }

    #[test]
    fn images_are_conserved(m in model(), n in 1usize..300, seed in any::<u64>(), exp in any::<bool>()) {
        let mut s = stages(&m);
        if exp {
            for st in &mut s {
                st.service = ServiceTime::Exponential { mean: st.service.mean() };
            }
        }
        let r = simulate(n, &s, seed).unwrap();
        prop_assert_eq!(r.entered, n);
        prop_assert_eq!(r.left, n);
        for st in &r.stages {
            prop_assert_eq!(st.completed, n);
        }
    }

    #[test]
    fn respects_lower_bounds(m in model(), n in 1usize..300) {
        let s = stages(&m);
        let r = simulate(n, &s, 0).unwrap();
        prop_assert!(r.makespan + 1e-9 >= bottleneck_bound(n, &s));
        prop_assert!(r.makespan + 1e-9 >= single_image_latency(&s));
    }

    #[test]
    fn more_workers_never_hurt(m in model(), n in 1usize..300, stage in 0usize..5, extra in 1usize..4) {
        let s = stages(&m);
        let i = stage % s.len();
        let mut more = s.clone();
        more[i].workers += extra;
        for mode in [Mode::Pipelined, Mode::Sequential] {
            let a = simulate_mode(n, &s, 0, mode).unwrap().makespan;
            let b = simulate_mode(n, &more, 0, mode).unwrap().makespan;
            prop_assert!(b <= a + 1e-9, "{mode}: {b} > {a}");
        }
    }

    #[test]
    fn bounded_buffers_never_beat_unbounded(m in model(), n in 1usize..200, cap in 0usize..3) {
        let s = stages(&m);
        let mut bounded = s.clone();
        for st in &mut bounded {
            st.queue_capacity = Some(cap);
        }
        let a = simulate(n, &s, 0).unwrap().makespan;
        let b = simulate(n, &bounded, 0).unwrap();
        prop_assert!(b.makespan + 1e-9 >= a);
        prop_assert_eq!(b.left, n);
    }

    #[test]
    fn closed_form_agreement_at_scale(m in model(), n in 2000usize..5000) {
        let s = stages(&m);
        let r = simulate(n, &s, 0).unwrap();
        let fill: f64 = single_image_latency(&s);
        let estimate = bottleneck_bound(n, &s) + fill;
        prop_assert!((r.makespan - estimate).abs() <= 0.01 * estimate, "{} vs {}", r.makespan, estimate);
    }

    #[test]
    fn solved_count_is_minimal(m in model(), n in 10usize..200, slack in 1.05f64..3.0) {
        let s = stages(&m);
        let unknown = m.len() - 1;
        let mut with_many = s.clone();
        with_many[unknown].workers = 64;
        let deadline = simulate(n, &with_many, 0).unwrap().makespan * slack;
        let (c, r) = min_workers_for_deadline(n, &s, unknown, deadline, &SearchOptions::default()).unwrap();
        prop_assert!(r.makespan <= deadline);
        if c > 1 {
            let mut fewer = s.clone();
            fewer[unknown].workers = c - 1;
            prop_assert!(simulate(n, &fewer, 0).unwrap().makespan > deadline);
        }
    }
}
