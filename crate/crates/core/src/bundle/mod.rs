//! Per-video feature bundles: the unit the engine processes.
//!
//! A bundle carries the frame activations entering the vision head, the text
//! items (class names, descriptors, captions, triplets) with the activations
//! entering the text head and their frozen sentence embeddings, both heads'
//! parameters, the alignment calibration, and optional ground truth.
//!
//! Class identity is the `id` of the `class_name` text item. Descriptors
//! point at it through `class_ref`, annotations through `class_label`, and
//! predictions are labeled with it.

mod manifest;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::head::HeadSpec;
use crate::tensor::Tensor;

pub use manifest::{load_bundle, save_bundle, MANIFEST};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextRole {
    ClassName,
    DescriptorAction,
    DescriptorObject,
    Triplet,
    Caption,
}

impl TextRole {
    pub fn is_descriptor(self) -> bool {
        matches!(self, TextRole::DescriptorAction | TextRole::DescriptorObject)
    }

    fn needs_pre_head(self) -> bool {
        !matches!(self, TextRole::Caption)
    }

    fn needs_sentence_embedding(self) -> bool {
        matches!(self, TextRole::ClassName | TextRole::Triplet | TextRole::Caption)
    }

    fn needs_frame_ref(self) -> bool {
        matches!(self, TextRole::Triplet | TextRole::Caption)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextItem {
    pub id: String,
    pub role: TextRole,
    pub class_ref: Option<String>,
    pub text: String,
    /// Activation entering the text head (vector of width `d_t`).
    pub pre_head: Option<Tensor>,
    /// Frozen uni-modal sentence embedding (vector of width `d_s`).
    pub sentence_embedding: Option<Tensor>,
    pub frame_ref: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub t_start: f64,
    pub t_end: f64,
    pub class_label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoBundle {
    pub video_id: String,
    pub fps: f64,
    /// Start time of each frame in seconds. Frame `i` covers
    /// `[frame_times[i], frame_times[i] + 1/fps)`.
    pub frame_times: Vec<f64>,
    /// `N x d_v` activations entering the vision head.
    pub frame_pre_head: Tensor,
    pub head_v: HeadSpec,
    pub head_t: HeadSpec,
    pub logit_scale: f64,
    pub logit_bias: f64,
    pub texts: Vec<TextItem>,
    pub annotations: Option<Vec<Annotation>>,
}

/// One broken invariant: which field, which rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

impl VideoBundle {
    pub fn n_frames(&self) -> usize {
        self.frame_times.len()
    }

    pub fn frame_duration(&self) -> f64 {
        1.0 / self.fps
    }

    /// Class items sorted by id.
    pub fn classes(&self) -> Vec<&TextItem> {
        let mut v: Vec<_> = self
            .texts
            .iter()
            .filter(|t| t.role == TextRole::ClassName)
            .collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    pub fn class_item(&self, class_id: &str) -> Option<&TextItem> {
        self.texts
            .iter()
            .find(|t| t.role == TextRole::ClassName && t.id == class_id)
    }

    /// Action and object descriptors of one class, in bundle order.
    pub fn descriptors(&self, class_id: &str) -> Vec<&TextItem> {
        self.texts
            .iter()
            .filter(|t| t.role.is_descriptor() && t.class_ref.as_deref() == Some(class_id))
            .collect()
    }

    pub fn items_with_role(&self, role: TextRole) -> Vec<&TextItem> {
        self.texts.iter().filter(|t| t.role == role).collect()
    }

    pub fn text(&self, id: &str) -> Option<&TextItem> {
        self.texts.iter().find(|t| t.id == id)
    }

    pub fn annotations(&self) -> &[Annotation] {
        self.annotations.as_deref().unwrap_or(&[])
    }
}

/// Lists every broken invariant. An empty list means the bundle satisfies
/// the preconditions of every downstream operation.
pub fn validate_bundle(b: &VideoBundle) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = b.frame_times.len();

    if b.video_id.is_empty() {
        out.push(Violation::new("video_id", "must be non-empty"));
    }
    if !(b.fps.is_finite() && b.fps > 0.0) {
        out.push(Violation::new("fps", "must be a positive finite number"));
    }
    if n == 0 {
        out.push(Violation::new("frame_times", "need at least one frame"));
    }
    if b.frame_times.iter().any(|t| !t.is_finite()) {
        out.push(Violation::new("frame_times", "must be finite"));
    } else if b.frame_times.windows(2).any(|w| w[1] <= w[0]) {
        out.push(Violation::new("frame_times", "must be strictly increasing"));
    }
    if !b.logit_scale.is_finite() {
        out.push(Violation::new("logit_scale", "must be finite"));
    }
    if !b.logit_bias.is_finite() {
        out.push(Violation::new("logit_bias", "must be finite"));
    }

    if b.frame_pre_head.rank() != 2 {
        out.push(Violation::new("frame_pre_head", "must be a 2-D tensor"));
    } else if b.frame_pre_head.rows() != n {
        out.push(Violation::new(
            "frame_pre_head",
            format!("has {} rows but there are {n} frame times", b.frame_pre_head.rows()),
        ));
    }
    if !b.frame_pre_head.is_finite() {
        out.push(Violation::new("frame_pre_head", "values must be finite"));
    }

    out.extend(b.head_v.violations("head_v"));
    out.extend(b.head_t.violations("head_t"));
    if let Some(w) = b.head_v.input_width() {
        if b.frame_pre_head.rank() == 2 && b.frame_pre_head.cols() != w {
            out.push(Violation::new(
                "frame_pre_head",
                format!(
                    "width {} does not match head_v input width {w}",
                    b.frame_pre_head.cols()
                ),
            ));
        }
    }
    match (b.head_v.output_width(), b.head_t.output_width()) {
        (Some(v), Some(t)) if v != t => out.push(Violation::new(
            "head_t",
            format!("output width {t} differs from head_v output width {v}"),
        )),
        _ => {}
    }

    let text_width = b.head_t.input_width();
    let mut ids = HashSet::new();
    let class_ids: HashSet<&str> = b
        .texts
        .iter()
        .filter(|t| t.role == TextRole::ClassName)
        .map(|t| t.id.as_str())
        .collect();
    let mut sentence_width: Option<usize> = None;
    for (i, t) in b.texts.iter().enumerate() {
        let field = if t.id.is_empty() {
            format!("texts[{i}]")
        } else {
            format!("texts[{}]", t.id)
        };
        if t.id.is_empty() {
            out.push(Violation::new(&field, "id must be non-empty"));
        } else if !ids.insert(t.id.as_str()) {
            out.push(Violation::new(&field, "duplicate id"));
        }
        if t.role.is_descriptor() {
            match t.class_ref.as_deref() {
                None => out.push(Violation::new(&field, "descriptor needs a class_ref")),
                Some(c) if !class_ids.contains(c) => out.push(Violation::new(
                    &field,
                    format!("class_ref {c:?} names no class_name item"),
                )),
                _ => {}
            }
        }
        if t.role.needs_frame_ref() {
            match t.frame_ref {
                None => out.push(Violation::new(&field, "needs a frame_ref")),
                Some(f) if f >= n => out.push(Violation::new(
                    &field,
                    format!("frame_ref {f} out of range for {n} frames"),
                )),
                _ => {}
            }
        }
        match &t.pre_head {
            Some(p) => {
                if p.rank() != 1 {
                    out.push(Violation::new(&field, "pre_head must be a vector"));
                } else if let Some(w) = text_width {
                    if p.len() != w {
                        out.push(Violation::new(
                            &field,
                            format!("pre_head width {} does not match head_t input width {w}", p.len()),
                        ));
                    }
                }
                if !p.is_finite() {
                    out.push(Violation::new(&field, "pre_head must be finite"));
                }
            }
            None if t.role.needs_pre_head() => {
                out.push(Violation::new(&field, "missing pre_head"))
            }
            None => {}
        }
        match &t.sentence_embedding {
            Some(s) => {
                if s.rank() != 1 {
                    out.push(Violation::new(&field, "sentence_embedding must be a vector"));
                } else {
                    match sentence_width {
                        None => sentence_width = Some(s.len()),
                        Some(w) if w != s.len() => out.push(Violation::new(
                            &field,
                            format!("sentence_embedding width {} differs from {w}", s.len()),
                        )),
                        _ => {}
                    }
                }
                if !s.is_finite() {
                    out.push(Violation::new(&field, "sentence_embedding must be finite"));
                }
            }
            None if t.role.needs_sentence_embedding() => {
                out.push(Violation::new(&field, "missing sentence_embedding"))
            }
            None => {}
        }
    }

    for (i, a) in b.annotations().iter().enumerate() {
        let field = format!("annotations[{i}]");
        if !(a.t_start.is_finite() && a.t_end.is_finite() && 0.0 <= a.t_start && a.t_start < a.t_end) {
            out.push(Violation::new(&field, "need 0 <= t_start < t_end"));
        }
        if !class_ids.contains(a.class_label.as_str()) {
            out.push(Violation::new(
                &field,
                format!("class_label {:?} names no class_name item", a.class_label),
            ));
        }
    }
    out
}

/// Ground-truth segments of a bundle grouped by class label.
pub fn segments_by_class(b: &VideoBundle) -> HashMap<&str, Vec<(f64, f64)>> {
    let mut m: HashMap<&str, Vec<(f64, f64)>> = HashMap::new();
    for a in b.annotations() {
        m.entry(a.class_label.as_str())
            .or_default()
            .push((a.t_start, a.t_end));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_bundle, SynthSpec};

    fn valid() -> VideoBundle {
        synth_bundle(3, &SynthSpec::small()).unwrap()
    }

    #[test]
    fn synthetic_bundle_is_valid() {
        assert_eq!(validate_bundle(&valid()), vec![]);
    }

    #[test]
    fn non_increasing_times() {
        let mut b = valid();
        b.frame_times[2] = b.frame_times[1];
        let v = validate_bundle(&b);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "frame_times");
    }

    #[test]
    fn descriptor_without_class_ref() {
        let mut b = valid();
        let idx = b.texts.iter().position(|t| t.role.is_descriptor()).unwrap();
        b.texts[idx].class_ref = None;
        let id = b.texts[idx].id.clone();
        let v = validate_bundle(&b);
        assert_eq!(v.len(), 1);
        assert!(v[0].field.contains(&id));
    }

    #[test]
    fn dangling_frame_ref() {
        let mut b = valid();
        let idx = b.texts.iter().position(|t| t.role == TextRole::Caption).unwrap();
        b.texts[idx].frame_ref = Some(10_000);
        let v = validate_bundle(&b);
        assert!(v.iter().any(|x| x.rule.contains("frame_ref")));
    }

    #[test]
    fn degenerate_annotation() {
        let mut b = valid();
        let a = &mut b.annotations.as_mut().unwrap()[0];
        a.t_end = a.t_start;
        let v = validate_bundle(&b);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "annotations[0]");
    }

    #[test]
    fn duplicate_ids() {
        let mut b = valid();
        let dup = b.texts[0].clone();
        b.texts.push(dup);
        assert!(validate_bundle(&b).iter().any(|x| x.rule == "duplicate id"));
    }
}
