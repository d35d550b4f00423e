use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::metrics::tiou;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub t_start: f64,
    pub t_end: f64,
    pub label: String,
    pub confidence: f64,
}

/// Maximal runs of frames scoring strictly above the mean score.
///
/// A run over frames `a..=b` spans `[t_a, t_b + 1/fps)`; its confidence is the
/// mean score inside the run times the class confidence.
pub fn extract_proposals(
    scores: &[f64],
    frame_times: &[f64],
    fps: f64,
    label: &str,
    class_confidence: f64,
) -> Vec<Proposal> {
    let n = scores.len().min(frame_times.len());
    if n == 0 {
        return Vec::new();
    }
    // Rounding can push the computed mean outside [min, max]; the exact
    // mean never is, and a constant sequence must yield no runs.
    let (lo, hi) = scores[..n]
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let threshold = (scores[..n].iter().sum::<f64>() / n as f64).clamp(lo, hi);
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if scores[i] <= threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && scores[i] > threshold {
            i += 1;
        }
        let mean = scores[start..i].iter().sum::<f64>() / (i - start) as f64;
        out.push(Proposal {
            t_start: frame_times[start],
            t_end: frame_times[i - 1] + 1.0 / fps,
            label: label.to_string(),
            confidence: mean * class_confidence,
        });
    }
    out
}

fn by_confidence(a: &Proposal, b: &Proposal) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.t_start.total_cmp(&b.t_start))
        .then(a.t_end.total_cmp(&b.t_end))
}

/// Greedy per-class non-maximum suppression. A proposal survives iff its
/// tIoU with every already-kept proposal of the same class is at most
/// `threshold`. Output is sorted by confidence, then start time.
pub fn nms(mut proposals: Vec<Proposal>, threshold: f64) -> Vec<Proposal> {
    proposals.sort_by(by_confidence);
    let mut kept: Vec<Proposal> = Vec::with_capacity(proposals.len());
    for p in proposals {
        let clash = kept.iter().any(|k| {
            k.label == p.label
                && tiou((k.t_start, k.t_end), (p.t_start, p.t_end)).unwrap_or(0.0) > threshold
        });
        if !clash {
            kept.push(p);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(a: f64, b: f64, label: &str, c: f64) -> Proposal {
        Proposal {
            t_start: a,
            t_end: b,
            label: label.into(),
            confidence: c,
        }
    }

    #[test]
    fn runs_above_mean() {
        let s = [0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let t: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        let props = extract_proposals(&s, &t, 2.0, "A", 0.5);
        assert_eq!(props.len(), 2);
        assert_eq!((props[0].t_start, props[0].t_end), (0.5, 1.5));
        assert_eq!((props[1].t_start, props[1].t_end), (2.5, 3.0));
        assert_eq!(props[0].confidence, 0.5);
    }

    #[test]
    fn constant_scores_give_nothing() {
        assert!(extract_proposals(&[0.4; 8], &[0.0; 8], 1.0, "A", 1.0).is_empty());
    }

    #[test]
    fn nms_is_per_class() {
        let kept = nms(
            vec![
                p(0.0, 10.0, "A", 0.9),
                p(1.0, 10.0, "A", 0.8),
                p(1.0, 10.0, "B", 0.7),
                p(20.0, 30.0, "A", 0.6),
            ],
            0.5,
        );
        let labels: Vec<_> = kept.iter().map(|k| (k.label.as_str(), k.t_start)).collect();
        assert_eq!(labels, vec![("A", 0.0), ("B", 1.0), ("A", 20.0)]);
    }
}
