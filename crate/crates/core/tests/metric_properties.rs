mod common;

use lidkit_core::data::{LanguageList, ScoreMatrix, TrialLabels};
use lidkit_core::fusion::FusionModel;
use lidkit_core::metrics::{c_avg, cllr, eer, expand_trials, min_c_avg, MetricReport};
use lidkit_core::model_io::{from_json, to_json};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn langs(k: usize) -> LanguageList {
    LanguageList::new((0..k).map(|i| format!("x{i}"))).unwrap()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("u{i}")).collect()
}

/// `(K, truth, row-major scores)` with every language present.
fn instance() -> impl Strategy<Value = (usize, Vec<usize>, Vec<f64>)> {
    (2usize..=6).prop_flat_map(|k| {
        (k..=30).prop_flat_map(move |n| {
            (
                Just(k),
                proptest::collection::vec(0..k, n).prop_map(move |mut t| {
                    for (i, v) in t.iter_mut().take(k).enumerate() {
                        *v = i;
                    }
                    t
                }),
                proptest::collection::vec(-8.0f64..8.0, n * k),
            )
        })
    })
}

fn build(k: usize, truth: &[usize], flat: &[f64]) -> (ScoreMatrix, TrialLabels) {
    let n = truth.len();
    let s = ScoreMatrix::new(ids(n), DMatrix::from_row_slice(n, k, flat), langs(k)).unwrap();
    (s, TrialLabels::new(ids(n), truth.to_vec(), k).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn costs_are_bounded_and_ordered((k, truth, flat) in instance(), p in 0.05f64..0.95) {
        let (s, l) = build(k, &truth, &flat);
        let trials = expand_trials(&s, &l, p).unwrap();
        let actual = c_avg(&trials, p, 0.0).unwrap();
        let best = min_c_avg(&trials, p).unwrap();
        prop_assert!((0.0..=1.0).contains(&actual));
        prop_assert!(best <= actual + 1e-15);
        let e = eer(&trials).unwrap();
        prop_assert!((0.0..=100.0).contains(&e));
        prop_assert!(cllr(&s, &l).unwrap() >= 0.0);
    }

    #[test]
    fn row_shifts_leave_every_metric_unchanged((k, truth, flat) in instance(), shift in -50.0f64..50.0) {
        // Scores are log-likelihoods up to a per-trial constant.
        let (s, l) = build(k, &truth, &flat);
        let shifted: Vec<f64> = flat.iter().enumerate().map(|(i, v)| v + shift * (i / k) as f64 / 10.0).collect();
        let (s2, _) = build(k, &truth, &shifted);
        // Roundoff in the shifted LLRs can flip a decision only at a near
        // tie, so those draws are skipped.
        let mut llrs: Vec<f64> = lidkit_core::metrics::detection_llrs(s.scores()).iter().copied().collect();
        llrs.push(0.0);
        llrs.sort_by(f64::total_cmp);
        prop_assume!(llrs.windows(2).all(|w| w[1] - w[0] > 1e-9));
        let a = MetricReport::compute(&s, &l, 0.5).unwrap();
        let b = MetricReport::compute(&s2, &l, 0.5).unwrap();
        prop_assert!((a.cllr_bits - b.cllr_bits).abs() < 1e-9);
        prop_assert_eq!(a.accuracy, b.accuracy);
        prop_assert_eq!(a.c_avg, b.c_avg);
        prop_assert_eq!(a.min_c_avg, b.min_c_avg);
        prop_assert!((a.eer_percent - b.eer_percent).abs() < 1e-9);
    }

    #[test]
    fn trial_order_is_irrelevant((k, truth, flat) in instance(), rot in 0usize..30) {
        let n = truth.len();
        let r = rot % n;
        let (s, l) = build(k, &truth, &flat);
        let mut truth2 = truth.clone();
        truth2.rotate_left(r);
        let mut flat2 = flat.clone();
        flat2.rotate_left(r * k);
        // Ids travel with their rows, so labels align by id.
        let mut id2 = ids(n);
        id2.rotate_left(r);
        let s2 = ScoreMatrix::new(id2.clone(), DMatrix::from_row_slice(n, k, &flat2), langs(k)).unwrap();
        let l2 = TrialLabels::new(id2, truth2, k).unwrap();
        let a = MetricReport::compute(&s, &l, 0.5).unwrap();
        let b = MetricReport::compute(&s2, &l2, 0.5).unwrap();
        prop_assert_eq!(a.c_avg, b.c_avg);
        prop_assert_eq!(a.min_c_avg, b.min_c_avg);
        prop_assert_eq!(a.eer_percent, b.eer_percent);
        prop_assert!((a.cllr_bits - b.cllr_bits).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_oracles((k, truth, flat) in instance(), p in 0.05f64..0.95) {
        let (s, l) = build(k, &truth, &flat);
        let trials = expand_trials(&s, &l, p).unwrap();
        let llrs = lidkit_core::metrics::detection_llrs(s.scores());
        prop_assert!((c_avg(&trials, p, 0.0).unwrap() - common::cavg(&llrs, &truth, p, 0.0)).abs() < 1e-12);
        prop_assert!((min_c_avg(&trials, p).unwrap() - common::min_cavg(&llrs, &truth, p)).abs() < 1e-12);
        prop_assert!((eer(&trials).unwrap() - common::eer_percent(&llrs, &truth)).abs() < 1e-9);
        prop_assert!((cllr(&s, &l).unwrap() - common::cllr_bits(s.scores(), &truth)).abs() < 1e-9);
    }

    #[test]
    fn fusion_models_round_trip(
        alphas in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..4),
        betas in proptest::collection::vec(proptest::num::f64::NORMAL, 2..8),
    ) {
        let m = FusionModel { alphas, betas: betas.clone(), languages: langs(betas.len()) };
        let back: FusionModel = from_json(&to_json(&m).unwrap()).unwrap();
        let bits = |m: &FusionModel| m.alphas.iter().chain(&m.betas).map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&m), bits(&back));
    }
}
