use proptest::prelude::*;
use tgloc_core::localizer::{extract_proposals, nms, Proposal};
use tgloc_core::metrics::tiou;

/// Scan-line oracle: mark frames strictly above the mean, then read off
/// maximal runs one frame at a time.
fn oracle_runs(scores: &[f64]) -> Vec<(usize, usize)> {
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let thr = mean.clamp(lo, hi);
    let mut runs = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match (s > thr, open) {
            (true, None) => open = Some(i),
            (false, Some(a)) => {
                runs.push((a, i - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(a) = open {
        runs.push((a, scores.len() - 1));
    }
    runs
}

/// Brute-force NMS: walk the confidence order, keep whatever does not
/// overlap a kept same-class proposal by more than the threshold.
fn oracle_nms(props: &[Proposal], thr: f64) -> Vec<Proposal> {
    let mut idx: Vec<usize> = (0..props.len()).collect();
    idx.sort_by(|&a, &b| {
        props[b]
            .confidence
            .partial_cmp(&props[a].confidence)
            .unwrap()
            .then(props[a].t_start.partial_cmp(&props[b].t_start).unwrap())
            .then(props[a].t_end.partial_cmp(&props[b].t_end).unwrap())
    });
    let mut kept: Vec<Proposal> = Vec::new();
    for i in idx {
        let p = &props[i];
        let ok = kept
            .iter()
            .filter(|k| k.label == p.label)
            .all(|k| tiou((k.t_start, k.t_end), (p.t_start, p.t_end)).unwrap() <= thr);
        if ok {
            kept.push(p.clone());
        }
    }
    kept
}

fn proposal_set() -> impl Strategy<Value = Vec<Proposal>> {
    prop::collection::vec(
        (0u32..30, 1u32..10, 0usize..3, 0u32..8),
        0..25,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(s, len, c, conf)| Proposal {
                t_start: s as f64,
                t_end: (s + len) as f64,
                label: ["A", "B", "C"][c].into(),
                confidence: conf as f64 / 7.0,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn runs_match_scan_line(scores in prop::collection::vec(0u8..5, 1..60), fps in prop::sample::select(vec![1.0, 2.0, 25.0])) {
        let scores: Vec<f64> = scores.into_iter().map(|s| s as f64 * 0.1).collect();
        let times: Vec<f64> = (0..scores.len()).map(|i| i as f64 / fps).collect();
        let props = extract_proposals(&scores, &times, fps, "A", 0.5);
        let runs = oracle_runs(&scores);
        prop_assert_eq!(props.len(), runs.len());
        for (p, (a, b)) in props.iter().zip(runs) {
            prop_assert_eq!(p.t_start, times[a]);
            prop_assert_eq!(p.t_end, times[b] + 1.0 / fps);
            let mean = scores[a..=b].iter().sum::<f64>() / (b - a + 1) as f64;
            prop_assert!((p.confidence - 0.5 * mean).abs() < 1e-15);
            prop_assert!(p.t_end > p.t_start);
        }
    }

    #[test]
    fn nms_matches_brute_force(props in proposal_set(), thr in prop::sample::select(vec![0.0, 0.3, 0.5, 0.7, 1.0])) {
        prop_assert_eq!(nms(props.clone(), thr), oracle_nms(&props, thr));
    }

    #[test]
    fn nms_properties(props in proposal_set(), thr in prop::sample::select(vec![0.0, 0.3, 0.5, 0.7])) {
        let kept = nms(props.clone(), thr);
        // kept proposals of one class pairwise overlap at most `thr`
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                if a.label == b.label {
                    prop_assert!(tiou((a.t_start, a.t_end), (b.t_start, b.t_end)).unwrap() <= thr);
                }
            }
        }
        // every dropped proposal is covered by a kept one at least as confident
        for p in &props {
            if kept.contains(p) {
                continue;
            }
            prop_assert!(kept.iter().any(|k| k.label == p.label
                && k.confidence >= p.confidence
                && tiou((k.t_start, k.t_end), (p.t_start, p.t_end)).unwrap() > thr));
        }
        // idempotent, and sorted by confidence
        prop_assert_eq!(nms(kept.clone(), thr), kept.clone());
        prop_assert!(kept.windows(2).all(|w| w[0].confidence >= w[1].confidence));
    }

    #[test]
    fn nms_threshold_one_keeps_all(props in proposal_set()) {
        let kept = nms(props.clone(), 1.0);
        prop_assert_eq!(kept.len(), props.len());
    }
}
