//! Deterministic synthetic bundles with known geometry.
//!
//! Every class owns a unit direction in the pre-head space and another in the
//! sentence-embedding space; a handful of background "scenes" own further
//! directions orthogonal to all classes. Foreground frames sit on their
//! class direction, background frames on the current scene direction, both
//! plus isotropic Gaussian noise. Captions and triplets follow the same
//! construction in sentence space, with captions deliberately leaking the
//! video's main class into background frames.
//!
//! All values are rounded to `f32` so a save/load cycle is lossless.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bundle::{Annotation, TextItem, TextRole, VideoBundle};
use crate::error::{Error, Result};
use crate::head::{HeadSpec, Layer};
use crate::tensor::Tensor;

const CLASS_NAMES: &[&str] = &[
    "HighJump",
    "PoleVault",
    "Diving",
    "GolfSwing",
    "LongJump",
    "Billiards",
    "HammerThrow",
    "TennisSwing",
    "CleanAndJerk",
    "Shotput",
];

const AMBIGUOUS: &[&str] = &["likely", "probably", "preparing to"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub class_index: usize,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_frames: usize,
    pub fps: f64,
    pub n_classes: usize,
    pub segments: Vec<SegmentSpec>,
    /// Per-coordinate standard deviation of the isotropic noise.
    pub noise: f64,
    pub embed_dim: usize,
    pub sentence_dim: usize,
    pub action_descriptors: usize,
    pub object_descriptors: usize,
    pub background_scenes: usize,
}

impl SynthSpec {
    /// 40 frames, 3 classes, one segment. Used by unit tests.
    pub fn small() -> Self {
        Self {
            n_frames: 40,
            fps: 2.0,
            n_classes: 3,
            segments: vec![SegmentSpec {
                class_index: 1,
                t_start: 5.0,
                t_end: 12.0,
            }],
            noise: 0.1,
            embed_dim: 16,
            sentence_dim: 12,
            action_descriptors: 2,
            object_descriptors: 1,
            background_scenes: 3,
        }
    }

    /// A scenario with one or two frame-aligned, non-overlapping segments of
    /// random classes, drawn from `seed`.
    pub fn random(seed: u64, n_frames: usize, n_classes: usize, noise: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce7);
        let fps = 1.0;
        let n_seg = rng.random_range(1..=2usize);
        let mut segments = Vec::with_capacity(n_seg);
        let span = n_frames / n_seg;
        for s in 0..n_seg {
            let lo_len = (n_frames / 10).max(2);
            let hi_len = (n_frames / 5).max(lo_len + 1).min(span.saturating_sub(2).max(lo_len + 1));
            let len = rng.random_range(lo_len..hi_len);
            let lo = s * span + 1;
            let hi = ((s + 1) * span).saturating_sub(len + 1).max(lo + 1);
            let start = rng.random_range(lo..hi);
            segments.push(SegmentSpec {
                class_index: rng.random_range(0..n_classes),
                t_start: start as f64 / fps,
                t_end: (start + len) as f64 / fps,
            });
        }
        Self {
            n_frames,
            fps,
            n_classes,
            segments,
            noise,
            embed_dim: 32,
            sentence_dim: 24,
            action_descriptors: 2,
            object_descriptors: 1,
            background_scenes: 3,
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_frames == 0 || self.n_classes == 0 {
            return bad("need at least one frame and one class".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative".into());
        }
        if self.background_scenes == 0 || self.action_descriptors == 0 {
            return bad("need at least one background scene and one action descriptor".into());
        }
        if self.embed_dim < self.n_classes + self.background_scenes
            || self.sentence_dim < self.n_classes + self.background_scenes
        {
            return bad(format!(
                "embedding widths must be at least n_classes + background_scenes = {}",
                self.n_classes + self.background_scenes
            ));
        }
        let duration = self.n_frames as f64 / self.fps;
        for (i, s) in self.segments.iter().enumerate() {
            if s.class_index >= self.n_classes {
                return bad(format!("segment {i} names class {} of {}", s.class_index, self.n_classes));
            }
            if !(0.0 <= s.t_start && s.t_start < s.t_end && s.t_end <= duration) {
                return bad(format!(
                    "segment {i} [{}, {}) lies outside [0, {duration})",
                    s.t_start, s.t_end
                ));
            }
        }
        Ok(())
    }
}

pub fn class_label(i: usize) -> String {
    if i < CLASS_NAMES.len() {
        CLASS_NAMES[i].to_string()
    } else {
        format!("Action{i:03}")
    }
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn gaussian(&mut self, d: usize, scale: f64) -> Vec<f64> {
        (0..d)
            .map(|_| scale * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `k` orthonormal vectors of width `d` (Gram-Schmidt on Gaussian draws).
    fn orthonormal(&mut self, k: usize, d: usize) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
        while out.len() < k {
            let mut v = self.gaussian(d, 1.0);
            for u in &out {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(u) {
                    *a -= p * b;
                }
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-6 {
                out.push(v.into_iter().map(|a| a / n).collect());
            }
        }
        out
    }

    fn near_identity(&mut self, d: usize, jitter: f64) -> Layer {
        let mut w = Tensor::identity(d);
        for v in w.values_mut() {
            *v += jitter * self.rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt();
        }
        let mut b = Tensor::zeros(&[d]);
        for v in b.values_mut() {
            *v = 0.01 * jitter * self.rng.sample::<f64, _>(StandardNormal);
        }
        w.round_to_f32();
        b.round_to_f32();
        Layer::Affine { weight: w, bias: b }
    }
}

fn add(a: &[f64], b: &[f64], scale: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + scale * y).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

fn vec_f32(v: Vec<f64>) -> Tensor {
    let mut t = Tensor::vector(v).expect("non-empty");
    t.round_to_f32();
    t
}

/// Builds a bundle as a pure function of `(seed, spec)`.
pub fn synth_bundle(seed: u64, spec: &SynthSpec) -> Result<VideoBundle> {
    spec.check()?;
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let (z, nb, d, ds) = (
        spec.n_classes,
        spec.background_scenes,
        spec.embed_dim,
        spec.sentence_dim,
    );
    let n = spec.n_frames;
    let basis = g.orthonormal(z + nb, d);
    let sbasis = g.orthonormal(z + nb, ds);
    let (class_dirs, scene_dirs) = basis.split_at(z);
    let (class_sent, scene_sent) = sbasis.split_at(z);
    let labels: Vec<String> = (0..z).map(class_label).collect();

    let frame_times: Vec<f64> = (0..n).map(|i| i as f64 / spec.fps).collect();
    let frame_class: Vec<Option<usize>> = frame_times
        .iter()
        .map(|&t| {
            spec.segments
                .iter()
                .find(|s| s.t_start <= t && t < s.t_end)
                .map(|s| s.class_index)
        })
        .collect();
    let frame_scene: Vec<usize> = (0..n).map(|i| i * nb / n).collect();
    let main_class = spec.segments.first().map(|s| s.class_index).unwrap_or(0);

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let dir = match frame_class[i] {
            Some(c) => &class_dirs[c],
            None => &scene_dirs[frame_scene[i]],
        };
        let noise = g.gaussian(d, spec.noise);
        rows.push(add(dir, &noise, 1.0));
    }
    let mut frame_pre_head = Tensor::from_rows(&rows)?;
    frame_pre_head.round_to_f32();

    let head_v = HeadSpec::new(vec![g.near_identity(d, 0.02), g.near_identity(d, 0.02)]);
    let head_t = HeadSpec::new(vec![g.near_identity(d, 0.02)]);

    let mut texts = Vec::new();
    for c in 0..z {
        texts.push(TextItem {
            id: labels[c].clone(),
            role: TextRole::ClassName,
            class_ref: None,
            text: format!("A video of action {}", labels[c]),
            pre_head: Some(vec_f32(class_dirs[c].clone())),
            sentence_embedding: Some(vec_f32(class_sent[c].clone())),
            frame_ref: None,
        });
    }
    for c in 0..z {
        for j in 0..spec.action_descriptors {
            // the first action descriptor lies exactly on the class direction
            let v = if j == 0 {
                class_dirs[c].clone()
            } else {
                let w = unit(g.gaussian(d, 1.0));
                unit(add(&class_dirs[c], &w, 0.3))
            };
            texts.push(TextItem {
                id: format!("{}/action/{j}", labels[c]),
                role: TextRole::DescriptorAction,
                class_ref: Some(labels[c].clone()),
                text: format!("A person performing step {} of {}", j + 1, labels[c]),
                pre_head: Some(vec_f32(v)),
                sentence_embedding: None,
                frame_ref: None,
            });
        }
        for j in 0..spec.object_descriptors {
            let w = unit(g.gaussian(d, 1.0));
            texts.push(TextItem {
                id: format!("{}/object/{j}", labels[c]),
                role: TextRole::DescriptorObject,
                class_ref: Some(labels[c].clone()),
                text: format!("equipment {} used in {}", j + 1, labels[c]),
                pre_head: Some(vec_f32(unit(add(&class_dirs[c], &w, 0.5)))),
                sentence_embedding: None,
                frame_ref: None,
            });
        }
    }

    let sent_noise = spec.noise.max(0.02);
    for i in 0..n {
        let scene = frame_scene[i];
        let (caption, sentence) = match frame_class[i] {
            Some(c) => {
                let hedge = AMBIGUOUS[(i + c) % AMBIGUOUS.len()];
                let text = if i % 3 == 0 {
                    format!("a person is {hedge} doing {}", labels[c].to_lowercase())
                } else {
                    format!("a person doing {}", labels[c].to_lowercase())
                };
                let v = add(&add(&class_sent[c], &scene_sent[scene], 0.5), &g.gaussian(ds, sent_noise), 1.0);
                (text, unit(v))
            }
            None => {
                let hedge = AMBIGUOUS[i % AMBIGUOUS.len()];
                let text = if i % 4 == 0 {
                    format!("a person {hedge} about to start in scene {scene}")
                } else {
                    format!("people standing in scene {scene}")
                };
                let v = add(
                    &add(&scene_sent[scene], &class_sent[main_class], 0.5),
                    &g.gaussian(ds, sent_noise),
                    1.0,
                );
                (text, unit(v))
            }
        };
        texts.push(TextItem {
            id: format!("caption/{i:05}"),
            role: TextRole::Caption,
            class_ref: None,
            text: caption,
            pre_head: None,
            sentence_embedding: Some(vec_f32(sentence)),
            frame_ref: Some(i),
        });
    }
    for i in 0..n {
        let scene = frame_scene[i];
        let (text, sent_dir, pre_dir) = match frame_class[i] {
            Some(c) => (
                format!("person perform {}", labels[c].to_lowercase()),
                &class_sent[c],
                &class_dirs[c],
            ),
            None => (format!("person stand scene{scene}"), &scene_sent[scene], &scene_dirs[scene]),
        };
        let sentence = unit(add(sent_dir, &g.gaussian(ds, sent_noise), 1.0));
        let pre = add(pre_dir, &g.gaussian(d, spec.noise), 1.0);
        texts.push(TextItem {
            id: format!("triplet/{i:05}"),
            role: TextRole::Triplet,
            class_ref: None,
            text,
            pre_head: Some(vec_f32(pre)),
            sentence_embedding: Some(vec_f32(sentence)),
            frame_ref: Some(i),
        });
    }

    let mut annotations: Vec<Annotation> = spec
        .segments
        .iter()
        .map(|s| Annotation {
            t_start: s.t_start,
            t_end: s.t_end,
            class_label: labels[s.class_index].clone(),
        })
        .collect();
    annotations.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));

    Ok(VideoBundle {
        video_id: format!("synth_{seed:06}"),
        fps: spec.fps,
        frame_times,
        frame_pre_head,
        head_v,
        head_t,
        logit_scale: 1.0,
        logit_bias: 0.0,
        texts,
        annotations: Some(annotations),
    })
}

/// Shuffles a slice with a seeded generator; shared by the class-split tool.
pub fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
}
