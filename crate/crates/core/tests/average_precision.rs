use std::collections::BTreeSet;

use proptest::prelude::*;
use tgloc_core::metrics::{
    anet_thresholds, average_precision, map_report, thumos_thresholds, tiou, GroundTruth, Prediction,
};

/// Straightforward re-derivation: greedy matching by scanning every ground
/// truth, then for each recall level the best precision at any point whose
/// recall is at least that level.
fn oracle_ap(preds: &[Prediction], gts: &[GroundTruth], thr: f64) -> Option<f64> {
    if gts.is_empty() {
        return (!preds.is_empty()).then_some(0.0);
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .partial_cmp(&preds[a].score)
            .unwrap()
            .then(preds[a].t_start.partial_cmp(&preds[b].t_start).unwrap())
    });
    let mut taken = vec![false; gts.len()];
    let mut points = Vec::new();
    let mut tp = 0.0;
    for (rank, &pi) in order.iter().enumerate() {
        let p = &preds[pi];
        let mut best: Option<usize> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] || g.video_id != p.video_id {
                continue;
            }
            let o = tiou((p.t_start, p.t_end), (g.t_start, g.t_end)).unwrap();
            if o < thr {
                continue;
            }
            best = match best {
                None => Some(gi),
                Some(b) => {
                    let ob = tiou((p.t_start, p.t_end), (gts[b].t_start, gts[b].t_end)).unwrap();
                    if o > ob || (o == ob && g.t_start < gts[b].t_start) {
                        Some(gi)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        if let Some(gi) = best {
            taken[gi] = true;
            tp += 1.0;
        }
        points.push((tp / gts.len() as f64, tp / (rank + 1) as f64));
    }
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for &(r, _) in &points {
        if r > last_recall {
            let best_p = points
                .iter()
                .filter(|(r2, _)| *r2 >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max);
            ap += (r - last_recall) * best_p;
            last_recall = r;
        }
    }
    Some(ap)
}

fn interval() -> impl Strategy<Value = (f64, f64)> {
    (0u32..40, 1u32..12).prop_map(|(s, len)| (s as f64 * 0.5, (s + len) as f64 * 0.5))
}

fn instance() -> impl Strategy<Value = (Vec<Prediction>, Vec<GroundTruth>, f64)> {
    let videos = prop::sample::select(vec!["a", "b", "c"]);
    let gts = prop::collection::vec((videos.clone(), interval()), 0..8).prop_map(|v| {
        v.into_iter()
            .map(|(vid, (s, e))| GroundTruth {
                video_id: vid.into(),
                t_start: s,
                t_end: e,
                label: "X".into(),
            })
            .collect::<Vec<_>>()
    });
    // scores on a coarse grid so ties actually occur
    let preds = prop::collection::vec((videos, interval(), 0u32..6), 0..14).prop_map(|v| {
        v.into_iter()
            .map(|(vid, (s, e), sc)| Prediction {
                video_id: vid.into(),
                t_start: s,
                t_end: e,
                label: "X".into(),
                score: sc as f64 / 5.0,
            })
            .collect::<Vec<_>>()
    });
    (preds, gts, prop::sample::select(vec![0.1, 0.3, 0.5, 0.7, 0.95]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_oracle((preds, gts, thr) in instance()) {
        let got = average_precision(&preds, &gts, thr).unwrap();
        let want = oracle_ap(&preds, &gts, thr);
        match (got, want) {
            (None, None) => {}
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}"),
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn invariant_under_monotone_confidence_transform((preds, gts, thr) in instance()) {
        let squashed: Vec<Prediction> = preds
            .iter()
            .map(|p| Prediction { score: (3.0 * p.score).exp() / (1.0 + (3.0 * p.score).exp()), ..p.clone() })
            .collect();
        prop_assert_eq!(
            average_precision(&preds, &gts, thr).unwrap(),
            average_precision(&squashed, &gts, thr).unwrap()
        );
    }

    #[test]
    fn duplicating_a_prediction_never_helps((preds, gts, thr) in instance(), pick in 0usize..14) {
        prop_assume!(!preds.is_empty());
        let dup = &preds[pick % preds.len()];
        // A prediction overlapping two ground truths may legitimately match
        // the second through its copy; the property concerns re-matching one.
        let reachable = gts
            .iter()
            .filter(|g| g.video_id == dup.video_id && tiou((dup.t_start, dup.t_end), (g.t_start, g.t_end)).unwrap() >= thr)
            .count();
        prop_assume!(reachable <= 1);
        let mut more = preds.clone();
        more.push(dup.clone());
        let before = average_precision(&preds, &gts, thr).unwrap().unwrap_or(0.0);
        let after = average_precision(&more, &gts, thr).unwrap().unwrap_or(0.0);
        prop_assert!(after <= before + 1e-12, "{before} -> {after}");
    }

    #[test]
    fn bounded_and_monotone_in_threshold((preds, gts, _) in instance()) {
        let mut prev = f64::INFINITY;
        for thr in [0.1, 0.3, 0.5, 0.7, 0.9] {
            if let Some(ap) = average_precision(&preds, &gts, thr).unwrap() {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
                prop_assert!(ap <= prev + 1e-12);
                prev = ap;
            }
        }
    }

    #[test]
    fn exact_copies_score_one(gts in prop::collection::vec(interval(), 1..6)) {
        let gts: Vec<GroundTruth> = gts.into_iter().enumerate().map(|(i, (s, e))| GroundTruth {
            video_id: format!("v{i}"), t_start: s, t_end: e, label: "X".into(),
        }).collect();
        let preds: Vec<Prediction> = gts.iter().enumerate().map(|(i, g)| Prediction {
            video_id: g.video_id.clone(), t_start: g.t_start, t_end: g.t_end,
            label: "X".into(), score: 1.0 - i as f64 * 0.01,
        }).collect();
        prop_assert_eq!(average_precision(&preds, &gts, 0.95).unwrap(), Some(1.0));
    }

    #[test]
    fn tiou_symmetric_and_bounded(a in interval(), b in interval()) {
        let x = tiou(a, b).unwrap();
        prop_assert_eq!(x, tiou(b, a).unwrap());
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(tiou(a, a).unwrap(), 1.0);
    }
}

fn gt(v: &str, s: f64, e: f64, label: &str) -> GroundTruth {
    GroundTruth {
        video_id: v.into(),
        t_start: s,
        t_end: e,
        label: label.into(),
    }
}

fn pred(v: &str, s: f64, e: f64, label: &str, score: f64) -> Prediction {
    Prediction {
        video_id: v.into(),
        t_start: s,
        t_end: e,
        label: label.into(),
        score,
    }
}

#[test]
fn map_averages_over_ground_truth_classes() {
    let gts = vec![gt("v", 0.0, 10.0, "A"), gt("v", 20.0, 30.0, "B")];
    let preds = vec![pred("v", 0.0, 10.0, "A", 0.9), pred("v", 50.0, 60.0, "B", 0.8)];
    let r = map_report(&preds, &gts, &thumos_thresholds(), None, None).unwrap();
    assert_eq!(r.classes.len(), 2);
    assert!(r.map.iter().all(|&m| (m - 0.5).abs() < 1e-12));
    assert_eq!(r.map_at(0.5), Some(0.5));
    let csv = r.to_csv();
    assert!(csv.starts_with("class,threshold,ap\nA,0.30,1.000000\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 5 + 5);
    assert!(csv.contains("mAP,0.50,0.500000"));
    assert!(r.to_table().contains("mAP"));
}

#[test]
fn class_filter_restricts_and_admits_labels() {
    let gts = vec![gt("v", 0.0, 10.0, "A"), gt("v", 20.0, 30.0, "B")];
    let preds = vec![pred("v", 0.0, 10.0, "A", 0.9), pred("v", 0.0, 5.0, "C", 0.5)];
    assert!(map_report(&preds, &gts, &[0.5], None, None).is_err());
    let filter: BTreeSet<String> = ["A", "C"].iter().map(|s| s.to_string()).collect();
    let r = map_report(&preds, &gts, &[0.5], Some(&filter), None).unwrap();
    assert_eq!(r.classes.len(), 1);
    assert_eq!(r.map, vec![1.0]);
}

#[test]
fn threshold_presets_exact() {
    assert_eq!(thumos_thresholds(), vec![0.3, 0.4, 0.5, 0.6, 0.7]);
    assert_eq!(
        anet_thresholds(),
        vec![0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]
    );
}

#[test]
fn spec_examples() {
    let g = [gt("v", 0.0, 10.0, "A")];
    // [FP, TP]: precision 0 then 1/2, recall reaches 1 at rank 2
    let p = [pred("v", 50.0, 60.0, "A", 0.9), pred("v", 0.0, 10.0, "A", 0.8)];
    assert_eq!(average_precision(&p, &g, 0.5).unwrap(), Some(0.5));
    let low = [pred("v", 0.0, 2.0, "A", 0.9)];
    assert_eq!(average_precision(&low, &g, 0.5).unwrap(), Some(0.0));
    let r = map_report(&[], &g, &[0.5], None, None).unwrap();
    assert_eq!(r.map, vec![0.0]);
}

#[test]
fn zero_length_prediction_is_an_error() {
    let gts = vec![gt("v", 0.0, 10.0, "A")];
    let preds = vec![pred("v", 3.0, 3.0, "A", 0.9)];
    assert!(average_precision(&preds, &gts, 0.5).is_err());
}
