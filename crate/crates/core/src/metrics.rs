//! Temporal IoU, interpolated average precision, and per-frame similarity
//! statistics around annotated segments.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bundle::{segments_by_class, TextRole, VideoBundle};
use crate::error::{Error, Result};
use crate::guidance::cluster_triplets;
use crate::head::dot;
use crate::linalg::cosine;
use crate::localizer::{frame_embeddings, text_embeddings, Heads};
use crate::tensor::Tensor;

/// Intersection over union of two half-open intervals. Intervals with
/// `end <= start` are rejected.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for (s, e) in [a, b] {
        if !s.is_finite() || !e.is_finite() || e <= s {
            return Err(Error::InvalidArgument(format!("interval [{s}, {e}) has no length")));
        }
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    Ok(inter / union)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub label: String,
}

/// Interpolated AP of one class at one tIoU threshold.
///
/// Predictions are visited by descending score (ties: earlier start). Each
/// claims the unmatched ground truth of its video with the highest tIoU, if
/// that tIoU reaches `threshold` (ties: earlier ground-truth start). AP sums,
/// over every recall increment, the best precision at that recall or beyond.
/// Without ground truth, AP is 0 if there are predictions and undefined
/// (`None`) otherwise.
pub fn average_precision<P, G>(preds: &[P], gts: &[G], threshold: f64) -> Result<Option<f64>>
where
    P: std::borrow::Borrow<Prediction>,
    G: std::borrow::Borrow<GroundTruth>,
{
    if gts.is_empty() {
        return Ok((!preds.is_empty()).then_some(0.0));
    }
    let mut order: Vec<&Prediction> = preds.iter().map(|p| p.borrow()).collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.t_start.total_cmp(&b.t_start)));
    let gts: Vec<&GroundTruth> = gts.iter().map(|g| g.borrow()).collect();
    let mut by_video: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_video.entry(g.video_id.as_str()).or_default().push(i);
    }
    let mut matched = vec![false; gts.len()];
    let mut tp_flags = Vec::with_capacity(order.len());
    for p in &order {
        let mut best: Option<(f64, usize)> = None;
        for &gi in by_video.get(p.video_id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            let g = gts[gi];
            let iou = tiou((p.t_start, p.t_end), (g.t_start, g.t_end))?;
            if matched[gi] || iou < threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bi, bg)) => iou > bi || (iou == bi && g.t_start < gts[bg].t_start),
            };
            if better {
                best = Some((iou, gi));
            }
        }
        if let Some((_, gi)) = best {
            matched[gi] = true;
        }
        tp_flags.push(best.is_some());
    }
    let n_gt = gts.len() as f64;
    let mut prec = Vec::with_capacity(tp_flags.len());
    let mut rec = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &hit) in tp_flags.iter().enumerate() {
        tp += hit as usize;
        prec.push(tp as f64 / (i + 1) as f64);
        rec.push(tp as f64 / n_gt);
    }
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in rec.iter().zip(&prec) {
        if *r > prev {
            ap += (r - prev) * p;
            prev = *r;
        }
    }
    Ok(Some(ap))
}

pub fn thumos_thresholds() -> Vec<f64> {
    (3..=7).map(|i| i as f64 / 10.0).collect()
}

pub fn anet_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Threshold preset by name: `thumos` or `anet`.
pub fn preset_thresholds(name: &str) -> Result<Vec<f64>> {
    match name {
        "thumos" => Ok(thumos_thresholds()),
        "anet" => Ok(anet_thresholds()),
        other => Err(Error::InvalidArgument(format!(
            "unknown threshold preset {other:?}; expected thumos or anet"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: String,
    pub ap: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassAp>,
    /// mAP at each threshold, averaged over evaluated classes.
    pub map: Vec<f64>,
    pub average_map: f64,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
}

impl EvalReport {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-12)
            .map(|i| self.map[i])
    }

    /// One row per class and threshold, followed by the mAP rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,threshold,ap\n");
        for c in &self.classes {
            for (t, a) in self.thresholds.iter().zip(&c.ap) {
                out.push_str(&format!("{},{t:.2},{a:.6}\n", c.class));
            }
        }
        for (t, m) in self.thresholds.iter().zip(&self.map) {
            out.push_str(&format!("mAP,{t:.2},{m:.6}\n"));
        }
        out
    }

    /// Fixed-width summary table: classes by rows, thresholds by columns.
    pub fn to_table(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.class.len())
            .chain([5])
            .max()
            .unwrap_or(5);
        let mut out = format!("{:<width$}", "class");
        for t in &self.thresholds {
            out.push_str(&format!("  {:>6}", format!("@{t:.2}")));
        }
        out.push_str(&format!("  {:>6}\n", "avg"));
        let mut row = |name: &str, vals: &[f64], avg: f64| {
            out.push_str(&format!("{name:<width$}"));
            for v in vals {
                out.push_str(&format!("  {v:>6.3}"));
            }
            out.push_str(&format!("  {avg:>6.3}\n"));
        };
        for c in &self.classes {
            row(&c.class, &c.ap, c.mean);
        }
        row("mAP", &self.map, self.average_map);
        if let Some(t1) = self.top1 {
            out.push_str(&format!("top-1 accuracy {:.2}%\n", 100.0 * t1));
        }
        if let Some(t5) = self.top5 {
            out.push_str(&format!("top-5 accuracy {:.2}%\n", 100.0 * t5));
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// mAP over the classes present in the ground truth (restricted to
/// `class_filter` when given). Predictions for classes outside the filter are
/// ignored; a prediction label that is neither in the ground truth nor in the
/// filter is an error.
pub fn map_report(
    preds: &[Prediction],
    gts: &[GroundTruth],
    thresholds: &[f64],
    class_filter: Option<&BTreeSet<String>>,
    rankings: Option<&BTreeMap<String, Vec<String>>>,
) -> Result<EvalReport> {
    let gt_classes: BTreeSet<String> = gts.iter().map(|g| g.label.clone()).collect();
    for p in preds {
        let known = gt_classes.contains(&p.label) || class_filter.is_some_and(|f| f.contains(&p.label));
        if !known {
            return Err(Error::UnknownLabel(p.label.clone()));
        }
    }
    let keep = |label: &str| class_filter.is_none_or(|f| f.contains(label));
    let classes: Vec<&String> = gt_classes.iter().filter(|c| keep(c)).collect();
    let mut rows = Vec::with_capacity(classes.len());
    for c in classes {
        let cp: Vec<&Prediction> = preds.iter().filter(|p| &p.label == c).collect();
        let cg: Vec<&GroundTruth> = gts.iter().filter(|g| &g.label == c).collect();
        let mut ap = Vec::with_capacity(thresholds.len());
        for &t in thresholds {
            ap.push(average_precision(&cp, &cg, t)?.unwrap_or(0.0));
        }
        rows.push(ClassAp {
            class: c.clone(),
            mean: mean(&ap),
            ap,
        });
    }
    let map: Vec<f64> = (0..thresholds.len())
        .map(|i| mean(&rows.iter().map(|r| r.ap[i]).collect::<Vec<_>>()))
        .collect();
    let (top1, top5) = match rankings {
        Some(r) => (topk_accuracy(r, gts, 1), topk_accuracy(r, gts, 5)),
        None => (None, None),
    };
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        average_map: mean(&map),
        map,
        classes: rows,
        top1,
        top5,
    })
}

/// Fraction of ranked videos whose top `k` classes include an annotated one.
pub fn topk_accuracy(rankings: &BTreeMap<String, Vec<String>>, gts: &[GroundTruth], k: usize) -> Option<f64> {
    let mut labels: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for g in gts {
        labels.entry(g.video_id.as_str()).or_default().insert(g.label.as_str());
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (video, ranked) in rankings {
        let Some(truth) = labels.get(video.as_str()) else {
            continue;
        };
        total += 1;
        if ranked.iter().take(k).any(|c| truth.contains(c.as_str())) {
            hit += 1;
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameGroup {
    Foreground,
    Transition,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    ImageToClass,
    CaptionToClass,
    TripletToClass,
}

impl SimilarityMode {
    pub const ALL: [SimilarityMode; 3] = [Self::ImageToClass, Self::CaptionToClass, Self::TripletToClass];

    pub fn name(self) -> &'static str {
        match self {
            Self::ImageToClass => "image_to_class",
            Self::CaptionToClass => "caption_to_class",
            Self::TripletToClass => "triplet_to_class",
        }
    }
}

impl FrameGroup {
    pub fn name(self) -> &'static str {
        match self {
            Self::Foreground => "foreground",
            Self::Transition => "transition",
            Self::Background => "background",
        }
    }
}

/// Foreground inside any closed segment `[a, b]`; transition within
/// `window` seconds before a start or after an end; background otherwise.
pub fn frame_group(t: f64, segments: &[(f64, f64)], window: f64) -> FrameGroup {
    if segments.iter().any(|&(a, b)| a <= t && t <= b) {
        FrameGroup::Foreground
    } else if segments
        .iter()
        .any(|&(a, b)| (a - window <= t && t < a) || (b < t && t <= b + window))
    {
        FrameGroup::Transition
    } else {
        FrameGroup::Background
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub class: String,
    pub group: FrameGroup,
    pub mode: SimilarityMode,
    pub mean_cosine: f64,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub mode: SimilarityMode,
    /// Frames with at least one value in this mode.
    pub covered: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityAnalysis {
    pub rows: Vec<SimilarityRow>,
    pub coverage: Vec<Coverage>,
}

impl SimilarityAnalysis {
    pub fn get(&self, class: &str, group: FrameGroup, mode: SimilarityMode) -> Option<&SimilarityRow> {
        self.rows
            .iter()
            .find(|r| r.class == class && r.group == group && r.mode == mode)
    }

    /// Frame-weighted combination of several analyses.
    pub fn merge(parts: &[SimilarityAnalysis]) -> SimilarityAnalysis {
        let mut acc: BTreeMap<(String, FrameGroup, SimilarityMode), (f64, usize)> = BTreeMap::new();
        let mut cov: BTreeMap<SimilarityMode, (usize, usize)> = BTreeMap::new();
        for part in parts {
            for r in &part.rows {
                let e = acc.entry((r.class.clone(), r.group, r.mode)).or_default();
                e.0 += r.mean_cosine * r.frame_count as f64;
                e.1 += r.frame_count;
            }
            for c in &part.coverage {
                let e = cov.entry(c.mode).or_default();
                e.0 += c.covered;
                e.1 += c.total;
            }
        }
        SimilarityAnalysis {
            rows: acc
                .into_iter()
                .map(|((class, group, mode), (sum, n))| SimilarityRow {
                    class,
                    group,
                    mode,
                    mean_cosine: sum / n as f64,
                    frame_count: n,
                })
                .collect(),
            coverage: cov
                .into_iter()
                .map(|(mode, (covered, total))| Coverage { mode, covered, total })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,group,mode,mean_cosine,frame_count\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6},{}\n",
                r.class,
                r.group.name(),
                r.mode.name(),
                r.mean_cosine,
                r.frame_count
            ));
        }
        out
    }
}

/// Mean value per frame for items attached to frames, `None` where a frame
/// has no item.
fn per_frame(n: usize, values: impl IntoIterator<Item = (usize, f64)>) -> Vec<Option<f64>> {
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (f, v) in values {
        sum[f] += v;
        count[f] += 1;
    }
    sum.into_iter()
        .zip(count)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect()
}

/// Per-class similarity of frames to the class, grouped into foreground,
/// transition and background frames, in three modes: frame embedding vs class
/// prompt embedding, caption vs class sentence embedding, and triplet-cluster
/// representative vs class sentence embedding.
pub fn similarity_analysis(
    b: &VideoBundle,
    transition_seconds: f64,
    s_clusters: usize,
    seed: u64,
) -> Result<SimilarityAnalysis> {
    if b.annotations().is_empty() {
        return Err(Error::InvalidArgument(format!(
            "video {} has no annotations to group frames by",
            b.video_id
        )));
    }
    let n = b.n_frames();
    let heads = Heads::from_bundle(b);
    let e_x = frame_embeddings(b, &heads)?;
    let segments = segments_by_class(b);
    let sentence = |id: &str| -> Result<&Tensor> {
        let item = b.text(id).ok_or_else(|| Error::UnknownLabel(id.to_string()))?;
        item.sentence_embedding.as_ref().ok_or_else(|| Error::MissingEmbedding {
            id: id.to_string(),
            field: "sentence_embedding",
        })
    };

    let captions = b.items_with_role(TextRole::Caption);
    let triplets = b.items_with_role(TextRole::Triplet);
    let summary = if triplets.is_empty() {
        None
    } else {
        let ids: Vec<String> = triplets.iter().map(|t| t.id.clone()).collect();
        let rows = ids
            .iter()
            .map(|id| sentence(id).map(|t| t.values()))
            .collect::<Result<Vec<_>>>()?;
        Some(cluster_triplets(&ids, &Tensor::from_rows(&rows)?, s_clusters, seed)?)
    };

    let mut classes: Vec<&str> = segments.keys().copied().collect();
    classes.sort_unstable();
    let mut rows = Vec::new();
    let mut covered = BTreeMap::new();
    for class in classes {
        let class_item = b
            .class_item(class)
            .ok_or_else(|| Error::UnknownLabel(class.to_string()))?;
        let pre = class_item.pre_head.as_ref().ok_or_else(|| Error::MissingEmbedding {
            id: class.to_string(),
            field: "pre_head",
        })?;
        let e_c = text_embeddings(&[pre], &heads)?;
        let class_sent = sentence(class)?;

        let image: Vec<Option<f64>> = (0..n).map(|i| Some(dot(e_x.row(i), e_c.row(0)))).collect();
        let mut cap = Vec::new();
        for c in &captions {
            if let Some(f) = c.frame_ref {
                cap.push((f, cosine(sentence(&c.id)?.values(), class_sent.values())?));
            }
        }
        let mut trip = Vec::new();
        if let Some(s) = &summary {
            for t in &triplets {
                let (Some(f), Some(rep)) = (t.frame_ref, s.representative_of(&t.id)) else {
                    continue;
                };
                trip.push((f, cosine(sentence(rep)?.values(), class_sent.values())?));
            }
        }
        let by_mode = [
            (SimilarityMode::ImageToClass, image),
            (SimilarityMode::CaptionToClass, per_frame(n, cap)),
            (SimilarityMode::TripletToClass, per_frame(n, trip)),
        ];
        let segs = &segments[class];
        for (mode, values) in &by_mode {
            covered.insert(*mode, values.iter().filter(|v| v.is_some()).count());
            let mut acc: BTreeMap<FrameGroup, (f64, usize)> = BTreeMap::new();
            for (i, v) in values.iter().enumerate() {
                if let Some(v) = v {
                    let e = acc
                        .entry(frame_group(b.frame_times[i], segs, transition_seconds))
                        .or_default();
                    e.0 += v;
                    e.1 += 1;
                }
            }
            for (group, (sum, count)) in acc {
                rows.push(SimilarityRow {
                    class: class.to_string(),
                    group,
                    mode: *mode,
                    mean_cosine: sum / count as f64,
                    frame_count: count,
                });
            }
        }
    }
    let coverage = SimilarityMode::ALL
        .iter()
        .map(|&mode| Coverage {
            mode,
            covered: covered.get(&mode).copied().unwrap_or(0),
            total: n,
        })
        .collect();
    // same order as `merge`, so single and merged analyses line up
    rows.sort_by(|a, b| (&a.class, a.group, a.mode).cmp(&(&b.class, b.group, b.mode)));
    Ok(SimilarityAnalysis { rows, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(v: &str, a: f64, b: f64, s: f64) -> Prediction {
        Prediction {
            video_id: v.into(),
            t_start: a,
            t_end: b,
            label: "A".into(),
            score: s,
        }
    }

    fn gt(v: &str, a: f64, b: f64) -> GroundTruth {
        GroundTruth {
            video_id: v.into(),
            t_start: a,
            t_end: b,
            label: "A".into(),
        }
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou((0.0, 10.0), (5.0, 15.0)).unwrap(), 5.0 / 15.0);
        assert_eq!(tiou((0.0, 1.0), (2.0, 3.0)).unwrap(), 0.0);
        assert_eq!(tiou((0.0, 1.0), (0.0, 1.0)).unwrap(), 1.0);
        assert!(tiou((1.0, 1.0), (0.0, 2.0)).is_err());
    }

    #[test]
    fn ap_perfect_and_empty() {
        let g = [gt("v", 0.0, 1.0), gt("v", 2.0, 3.0)];
        let p = [pred("v", 0.0, 1.0, 0.9), pred("v", 2.0, 3.0, 0.8)];
        assert_eq!(average_precision(&p, &g, 0.5).unwrap(), Some(1.0));
        assert_eq!(average_precision::<Prediction, _>(&[], &g, 0.5).unwrap(), Some(0.0));
        assert_eq!(average_precision::<_, GroundTruth>(&p, &[], 0.5).unwrap(), Some(0.0));
        assert_eq!(average_precision::<Prediction, GroundTruth>(&[], &[], 0.5).unwrap(), None);
    }

    #[test]
    fn ap_hand_computed() {
        // hits at ranks 1 and 3 out of 2 ground truths: 0.5 * 1 + 0.5 * 2/3
        let g = [gt("v", 0.0, 1.0), gt("v", 5.0, 6.0)];
        let p = [
            pred("v", 0.0, 1.0, 0.9),
            pred("v", 10.0, 11.0, 0.8),
            pred("v", 5.0, 6.0, 0.7),
        ];
        let ap = average_precision(&p, &g, 0.5).unwrap().unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn duplicates_are_false_positives() {
        let g = [gt("v", 0.0, 1.0)];
        let p = [pred("v", 0.0, 1.0, 0.9), pred("v", 0.0, 1.0, 0.8)];
        assert_eq!(average_precision(&p, &g, 0.5).unwrap(), Some(1.0));
        let p = [pred("v", 0.0, 1.0, 0.8), pred("w", 0.0, 1.0, 0.9)];
        assert_eq!(average_precision(&p, &g, 0.5).unwrap(), Some(0.5));
    }

    #[test]
    fn presets() {
        assert_eq!(thumos_thresholds(), vec![0.3, 0.4, 0.5, 0.6, 0.7]);
        let a = anet_thresholds();
        assert_eq!(a.len(), 10);
        assert_eq!(a[0], 0.5);
        assert_eq!(a[9], 0.95);
        assert!(preset_thresholds("coco").is_err());
    }

    #[test]
    fn unknown_prediction_label() {
        let mut p = pred("v", 0.0, 1.0, 0.5);
        p.label = "Z".into();
        assert!(matches!(
            map_report(&[p], &[gt("v", 0.0, 1.0)], &[0.5], None, None),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn groups() {
        let segs = [(10.0, 20.0)];
        assert_eq!(frame_group(10.0, &segs, 2.0), FrameGroup::Foreground);
        assert_eq!(frame_group(20.0, &segs, 2.0), FrameGroup::Foreground);
        assert_eq!(frame_group(8.0, &segs, 2.0), FrameGroup::Transition);
        assert_eq!(frame_group(22.0, &segs, 2.0), FrameGroup::Transition);
        assert_eq!(frame_group(7.9, &segs, 2.0), FrameGroup::Background);
    }
}
