mod common;

use std::collections::BTreeMap;

use outbreak_fusion::eval::{
    self, detection_curve, fractional_ranks, partial_auc, rank_methods, roc_curve, MethodResult, ScoredWeek,
};
use outbreak_fusion::rng::{derive_stream, StreamId};
use outbreak_fusion::synthgen::Structure;
use proptest::prelude::*;
use rand::Rng;

fn instance(seed: u64) -> Vec<ScoredWeek> {
    let mut rng = derive_stream(seed, StreamId::new(0, 0, "eval-instance"));
    common::random_instance(&mut rng, 200)
}

fn full_auc(v: &[(f64, f64)]) -> f64 {
    v.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn curves_match_brute_force(seed in any::<u64>()) {
        let w = instance(seed);
        prop_assert_eq!(roc_curve(&w).unwrap().vertices().to_vec(), common::brute_roc(&w));
        prop_assert_eq!(detection_curve(&w).unwrap().vertices().to_vec(), common::brute_detection(&w));
    }

    #[test]
    fn partial_area_matches_clipped_integral(seed in any::<u64>(), e in 0.001f64..=1.0) {
        let w = instance(seed);
        for c in [roc_curve(&w).unwrap(), detection_curve(&w).unwrap()] {
            let a = partial_auc(&c, e).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - common::brute_partial_auc(c.vertices(), e)).abs() < 1e-12);
        }
    }

    #[test]
    fn full_range_is_plain_auc(seed in any::<u64>()) {
        let c = roc_curve(&instance(seed)).unwrap();
        prop_assert!((partial_auc(&c, 1.0).unwrap() - full_auc(c.vertices())).abs() < 1e-15);
    }

    #[test]
    fn curves_are_anchored_and_monotone(seed in any::<u64>()) {
        let w = instance(seed);
        for c in [roc_curve(&w).unwrap(), detection_curve(&w).unwrap()] {
            let v = c.vertices();
            prop_assert_eq!(v[0], (0.0, 0.0));
            prop_assert_eq!(*v.last().unwrap(), (1.0, 1.0));
            prop_assert!(v.windows(2).all(|p| p[1].0 >= p[0].0 && p[1].1 >= p[0].1));
        }
    }

    #[test]
    fn increasing_transform_changes_nothing(seed in any::<u64>()) {
        let w = instance(seed);
        let squashed: Vec<ScoredWeek> = w
            .iter()
            .map(|x| ScoredWeek { alarm_score: x.alarm_score.powi(3) * 0.5 + 0.25, ..*x })
            .collect();
        prop_assert_eq!(roc_curve(&w).unwrap(), roc_curve(&squashed).unwrap());
        prop_assert_eq!(detection_curve(&w).unwrap(), detection_curve(&squashed).unwrap());
    }

    #[test]
    fn detection_dominates_when_spans_peak_together(seed in any::<u64>()) {
        // force every span's maximum onto a week by raising its first week
        let mut w = instance(seed);
        let mut first = BTreeMap::new();
        for (i, x) in w.iter().enumerate() {
            if let Some(id) = x.span_id {
                first.entry((x.series, id)).or_insert(i);
            }
        }
        for &i in first.values() {
            w[i].alarm_score = 1.0;
        }
        let d = eval::dauc(&w, 0.01).unwrap();
        let p = eval::pauc(&w, 0.01).unwrap();
        prop_assert!(d >= p - 1e-15, "{} < {}", d, p);
    }

    #[test]
    fn ranks_sum_to_triangular_number(values in prop::collection::vec(0u8..5, 1..12)) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64 / 4.0).collect();
        let m = v.len() as f64;
        prop_assert_eq!(fractional_ranks(&v).iter().sum::<f64>(), m * (m + 1.0) / 2.0);
    }
}

#[test]
fn chance_scores_give_half_of_e() {
    let mut rng = derive_stream(11, StreamId::new(0, 0, "chance"));
    let n = 200_000;
    let w: Vec<ScoredWeek> = (0..n)
        .map(|i| {
            let span = (i % 2 == 0).then_some(i as u32 / 2);
            ScoredWeek::new(0, i as u32, rng.random::<f64>(), span).unwrap()
        })
        .collect();
    let p = eval::pauc(&w, 0.01).unwrap();
    // the empirical ROC on [0, 0.01] averages 1000 positives per 1000 negatives
    assert!((p - 0.005).abs() < 0.0015, "{p}");
}

#[test]
fn average_rank_of_best_method_formats() {
    let methods: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
    let structures: BTreeMap<u32, Structure> = (0..42).map(|c| (c, Structure::ALL[c as usize / 7])).collect();
    let mut results = Vec::new();
    for c in 0..42u32 {
        // A wins 14 cases and comes second in 28
        let a = if c % 3 == 0 { 0.9 } else { 0.5 };
        for (m, v) in [("A", a), ("B", 0.7), ("C", 0.1)] {
            results.push(MethodResult {
                test_case: c,
                method: m.into(),
                dauc: v,
                pauc: v,
            });
        }
    }
    let rows = rank_methods(&methods, &results, &structures).unwrap();
    let a = rows.iter().find(|r| r.method == "A" && r.subset == eval::OVERALL).unwrap();
    assert!((a.avg_rank - 70.0 / 42.0).abs() < 1e-12);
    assert_eq!(format!("{:.3}", a.avg_rank), "1.667");
}
