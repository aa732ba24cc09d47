mod common;

use archft::archspace::ActionVector;
use archft::controller::{ControllerConfig, ControllerPolicy};
use archft::earlystop::{search_saving, ActionHistory, StopReason};
use archft::numkernel::Rng;
use proptest::prelude::*;

fn v(s: &str) -> ActionVector {
    ActionVector::from_bitstring(s).unwrap()
}

/// First round at which the monitor reports stable, if any.
fn stop_round(trace: &[(ActionVector, ActionVector)], k: usize, w: usize, p: f64) -> Option<usize> {
    let mut h = ActionHistory::new(vec![2; k], w, p).unwrap();
    for (s, g) in trace {
        if h.record(s, g).unwrap().stable {
            return Some(h.rounds());
        }
    }
    None
}

#[test]
fn constant_stream_stabilizes_exactly_at_window() {
    for w in [1, 5, 20] {
        let mut h = ActionHistory::new(vec![2; 4], w, 0.9).unwrap();
        for r in 1..=w {
            h.record(&v("1010"), &v("1010")).unwrap();
            assert_eq!(h.is_stable(), r == w, "w={w} r={r}");
        }
        assert!(h.window_frequencies().iter().zip([1, 0, 1, 0]).all(|(f, a)| f[a] == 1.0));
    }
}

#[test]
fn alternating_stream_has_half_frequencies() {
    let mut h = ActionHistory::new(vec![2; 3], 10, 0.9).unwrap();
    for r in 0..30 {
        let a = if r % 2 == 0 { v("000") } else { v("111") };
        h.record(&a, &v("000")).unwrap();
    }
    assert!(h.window_frequencies().iter().all(|f| f == &vec![0.5, 0.5]));
    assert!(!h.is_stable());
}

#[test]
fn greedy_flip_resets_the_streak() {
    let w = 8;
    let mut h = ActionHistory::new(vec![2; 2], w, 0.9).unwrap();
    for _ in 0..w {
        h.record(&v("11"), &v("11")).unwrap();
    }
    assert!(h.is_stable());
    h.record(&v("11"), &v("10")).unwrap();
    assert!(!h.is_stable());
    for i in 1..w {
        h.record(&v("11"), &v("11")).unwrap();
        assert!(!h.is_stable(), "stable {i} rounds after the flip");
    }
    h.record(&v("11"), &v("11")).unwrap();
    assert!(h.is_stable());
}

#[test]
fn heatmap_rows_match_hand_count() {
    let sampled = ["0110", "1110", "0100", "1111", "0010", "1100", "0110", "1000", "0011", "1110"];
    let mut h = ActionHistory::new(vec![2; 4], 4, 0.9).unwrap();
    for s in sampled {
        h.record(&v(s), &v("0000")).unwrap();
    }
    // rounds 7..10: 0110 1000 0011 1110 -> ones per site 2,2,3,1
    assert_eq!(h.rows()[9].p_one, vec![0.5, 0.5, 0.75, 0.25]);
    // rounds 1..3 (window not yet full): 0110 1110 0100 -> 1,3,2,0 of 3
    assert_eq!(h.rows()[2].p_one, vec![1.0 / 3.0, 1.0, 2.0 / 3.0, 0.0]);
    // whole run: site 1 has five ones in ten rounds
    assert_eq!(h.run_frequencies()[0], vec![0.5, 0.5]);
    for f in h.run_frequencies() {
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn settling_trace_stops_window_rounds_after_the_fix() {
    let trace = common::settling_trace(140, 180, &[1, 1, 1, 0, 0, 0, 0, 1], 7);
    let s20 = stop_round(&trace, 8, 20, 0.9).unwrap();
    assert_eq!(s20, 160);
    assert!((search_saving(s20, 180) - 20.0 / 180.0).abs() < 1e-15);
    assert_eq!(format!("{:.1}", 100.0 * search_saving(s20, 180)), "11.1");
    let s40 = stop_round(&trace, 8, 40, 0.9).unwrap();
    assert_eq!(s40, 180);
    assert_eq!(search_saving(s40, 180), 0.0);
    for w in [2, 5, 10, 30] {
        let s = stop_round(&trace, 8, w, 0.9).unwrap();
        assert_eq!(s, 140 + w);
        assert!(search_saving(s, 180) >= (180.0 - (140 + w) as f64) / 180.0 - 1e-15);
    }
    assert_eq!(format!("{:.1}", 100.0 * search_saving(140, 180)), "22.2");
}

#[test]
fn random_stream_runs_out_the_budget() {
    let mut rng = Rng::new(3);
    let budget = 200;
    let mut h = ActionHistory::new(vec![2; 6], 20, 0.9).unwrap();
    for _ in 0..budget {
        let s = ActionVector((0..6).map(|_| rng.below(2)).collect());
        let g = ActionVector((0..6).map(|_| rng.below(2)).collect());
        h.record(&s, &g).unwrap();
        assert!(!h.is_stable());
    }
    let d = h.decide(v("000000"), budget).unwrap();
    assert_eq!(d.reason, StopReason::BudgetExhausted);
    assert_eq!(d.stop_round, budget);
    assert_eq!(d.search_saving(budget), 0.0);
}

#[test]
fn finalize_uses_the_greedy_episode() {
    let policy = ControllerPolicy::new(vec![2; 3], ControllerConfig::default(), 1).unwrap();
    let mut h = ActionHistory::new(vec![2; 3], 5, 0.9).unwrap();
    assert!(h.finalize(&policy, 100).is_err());
    for _ in 0..5 {
        h.record(&v("000"), &v("000")).unwrap();
    }
    let d = h.finalize(&policy, 100).unwrap();
    assert_eq!(d.reason, StopReason::Stable);
    assert_eq!(d.stop_round, 5);
    assert_eq!(d.a_star, v("000"));
    assert!((d.search_saving(100) - 0.95).abs() < 1e-15);
}

#[test]
fn bad_inputs_are_rejected() {
    let mut h = ActionHistory::new(vec![2; 3], 5, 0.9).unwrap();
    assert!(h.record(&v("01"), &v("010")).is_err());
    assert!(h.record(&v("012"), &v("010")).is_err());
    assert!(ActionHistory::new(vec![2], 5, 0.5).is_err());
    assert!(ActionHistory::new(vec![2], 0, 0.9).is_err());
}

#[test]
fn csv_has_one_row_per_round() {
    let mut h = ActionHistory::new(vec![2; 2], 2, 0.9).unwrap();
    h.record(&v("01"), &v("01")).unwrap();
    h.record(&v("11"), &v("01")).unwrap();
    h.record(&v("01"), &v("01")).unwrap();
    let mut out = Vec::new();
    h.write_csv(&mut out).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "round,p_a1_1,p_a2_1,greedy,stable\n1,0.0000,1.0000,01,0\n2,0.5000,1.0000,01,0\n3,0.5000,1.0000,01,0\n"
    );
}

proptest! {
    #[test]
    fn repeating_the_greedy_vector_never_destabilizes(
        seed in any::<u64>(),
        w in 1usize..12,
        prefix in 0usize..40,
        extra in 1usize..30,
    ) {
        let mut rng = Rng::new(seed);
        let mut h = ActionHistory::new(vec![2; 3], w, 0.75).unwrap();
        let mut last = ActionVector::zeros(3);
        for _ in 0..prefix {
            let s = ActionVector((0..3).map(|_| rng.below(2)).collect());
            last = if rng.below(4) == 0 { s.clone() } else { last };
            h.record(&s, &last).unwrap();
        }
        let mut was = h.is_stable();
        for _ in 0..extra {
            h.record(&last, &last).unwrap();
            let now = h.is_stable();
            prop_assert!(!was || now);
            was = now;
        }
    }
}
