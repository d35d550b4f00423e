//! Frame scores as a differentiable function of both heads.
//!
//! The forward pass maps frames and texts through their heads, normalizes the
//! rows, and turns every frame/text cosine into an alignment probability
//! `pi = logistic(scale * cos + bias)`. The base score of a frame is the mean
//! of `pi` over the class descriptors; the refined score adds
//! `alpha * (mean over affine triplets - mean over distractors)`.

use super::Heads;
use crate::bundle::{TextItem, VideoBundle};
use crate::error::{Error, Result};
use crate::guidance::GuidanceSplit;
use crate::head::{dot, head_backward, head_forward, ParamGrads, Tape};
use crate::linalg::{logistic, norm};
use crate::tensor::Tensor;

/// Everything the scores depend on besides the head parameters.
#[derive(Debug, Clone)]
pub struct ScoreProblem {
    /// Frame pre-head features, `N x d_v`.
    pub frames: Tensor,
    /// Stacked text pre-head features: descriptors, then affine, then distractor rows.
    pub texts: Tensor,
    pub n_descriptors: usize,
    pub n_affine: usize,
    pub n_distractor: usize,
    pub alpha: f64,
    pub scale: f64,
    pub bias: f64,
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ScoreForward {
    pub base: Vec<f64>,
    pub refined: Vec<f64>,
    /// `N x M` alignment probabilities, row-major.
    pub pi: Vec<f64>,
    e_x: Tensor,
    e_t: Tensor,
    norm_x: Vec<f64>,
    norm_t: Vec<f64>,
    tape_v: Tape,
    tape_t: Tape,
}

#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub vision: ParamGrads,
    pub text: ParamGrads,
}

impl HeadGrads {
    pub fn flatten(&self) -> Vec<f64> {
        self.vision
            .iter()
            .chain(&self.text)
            .flat_map(|t| t.values().iter().copied())
            .collect()
    }
}

fn pre_head(item: &TextItem) -> Result<&Tensor> {
    item.pre_head.as_ref().ok_or_else(|| Error::MissingEmbedding {
        id: item.id.clone(),
        field: "pre_head",
    })
}

fn normalize(y: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let mut e = y.clone();
    let mut norms = Vec::with_capacity(y.rows());
    for r in 0..y.rows() {
        let n = norm(y.row(r));
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm { row: r });
        }
        for v in e.row_mut(r) {
            *v /= n;
        }
        norms.push(n);
    }
    Ok((e, norms))
}

/// Backward of row normalization: `dy = (de - e (e . de)) / |y|`.
fn normalize_backward(e: &Tensor, norms: &[f64], de: &Tensor) -> Tensor {
    let mut dy = de.clone();
    for (r, &n) in norms.iter().enumerate().take(e.rows()) {
        let er = e.row(r);
        let proj = dot(er, de.row(r));
        for (d, &ev) in dy.row_mut(r).iter_mut().zip(er) {
            *d = (*d - ev * proj) / n;
        }
    }
    dy
}

impl ScoreProblem {
    /// Builds the problem for one class of a bundle.
    ///
    /// With `use_descriptors` off, the class prompt stands in as the only
    /// descriptor. An empty split disables the refinement term.
    pub fn from_bundle(
        b: &VideoBundle,
        class_id: &str,
        split: &GuidanceSplit,
        alpha: f64,
        use_descriptors: bool,
    ) -> Result<Self> {
        let class = b
            .class_item(class_id)
            .ok_or_else(|| Error::UnknownLabel(class_id.to_string()))?;
        let mut rows: Vec<&Tensor> = Vec::new();
        if use_descriptors {
            for d in b.descriptors(class_id) {
                rows.push(pre_head(d)?);
            }
            if rows.is_empty() {
                return Err(Error::NoDescriptors {
                    class: class_id.to_string(),
                });
            }
        } else {
            rows.push(pre_head(class)?);
        }
        let n_descriptors = rows.len();
        let (mut n_affine, mut n_distractor) = (0, 0);
        if !split.is_empty() {
            for id in &split.affine_ids {
                rows.push(pre_head(b.text(id).ok_or_else(|| Error::UnknownLabel(id.clone()))?)?);
            }
            for id in &split.distractor_ids {
                rows.push(pre_head(b.text(id).ok_or_else(|| Error::UnknownLabel(id.clone()))?)?);
            }
            n_affine = split.affine_ids.len();
            n_distractor = split.distractor_ids.len();
        }
        let texts = Tensor::from_rows(&rows.iter().map(|t| t.values()).collect::<Vec<_>>())?;
        Ok(Self {
            frames: b.frame_pre_head.clone(),
            texts,
            n_descriptors,
            n_affine,
            n_distractor,
            alpha,
            scale: b.logit_scale,
            bias: b.logit_bias,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    fn n_texts(&self) -> usize {
        self.n_descriptors + self.n_affine + self.n_distractor
    }

    fn has_refinement(&self) -> bool {
        self.n_affine > 0 && self.n_distractor > 0
    }

    pub fn forward(&self, heads: &Heads) -> Result<ScoreForward> {
        let (y_x, tape_v) = head_forward(&heads.vision, &self.frames)?;
        let (y_t, tape_t) = head_forward(&heads.text, &self.texts)?;
        if y_x.cols() != y_t.cols() {
            return Err(Error::DimensionMismatch {
                context: "head output widths".into(),
                expected: y_x.cols(),
                found: y_t.cols(),
            });
        }
        let (e_x, norm_x) = normalize(&y_x)?;
        let (e_t, norm_t) = normalize(&y_t)?;
        let (n, m) = (e_x.rows(), self.n_texts());
        let mut pi = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                pi.push(logistic(self.scale * dot(e_x.row(i), e_t.row(j)) + self.bias));
            }
        }
        let (nd, na) = (self.n_descriptors, self.n_affine);
        let mut base = Vec::with_capacity(n);
        let mut refined = Vec::with_capacity(n);
        for i in 0..n {
            let row = &pi[i * m..(i + 1) * m];
            let s = row[..nd].iter().sum::<f64>() / nd as f64;
            base.push(s);
            if self.has_refinement() {
                let aff = row[nd..nd + na].iter().sum::<f64>() / na as f64;
                let dis = row[nd + na..].iter().sum::<f64>() / self.n_distractor as f64;
                refined.push(s + self.alpha * (aff - dis));
            } else {
                refined.push(s);
            }
        }
        Ok(ScoreForward {
            base,
            refined,
            pi,
            e_x,
            e_t,
            norm_x,
            norm_t,
            tape_v,
            tape_t,
        })
    }

    /// Pulls gradients w.r.t. the base and refined scores back to both heads.
    pub fn backward(
        &self,
        heads: &Heads,
        fwd: &ScoreForward,
        d_base: &[f64],
        d_refined: &[f64],
    ) -> Result<HeadGrads> {
        let (n, m) = (fwd.e_x.rows(), self.n_texts());
        if d_base.len() != n || d_refined.len() != n {
            return Err(Error::DimensionMismatch {
                context: "score gradient length".into(),
                expected: n,
                found: d_base.len().min(d_refined.len()),
            });
        }
        let (nd, na) = (self.n_descriptors, self.n_affine);
        let w_desc = 1.0 / nd as f64;
        let (w_aff, w_dis) = if self.has_refinement() {
            (self.alpha / na as f64, -self.alpha / self.n_distractor as f64)
        } else {
            (0.0, 0.0)
        };
        let width = fwd.e_x.cols();
        let mut de_x = Tensor::zeros(&[n, width]);
        let mut de_t = Tensor::zeros(&[m, width]);
        for i in 0..n {
            for j in 0..m {
                let w_pi = if j < nd {
                    (d_base[i] + d_refined[i]) * w_desc
                } else if j < nd + na {
                    d_refined[i] * w_aff
                } else {
                    d_refined[i] * w_dis
                };
                if w_pi == 0.0 {
                    continue;
                }
                let p = fwd.pi[i * m + j];
                let dc = w_pi * p * (1.0 - p) * self.scale;
                let (ex, et) = (fwd.e_x.row(i), fwd.e_t.row(j));
                for (d, &v) in de_x.row_mut(i).iter_mut().zip(et) {
                    *d += dc * v;
                }
                for (d, &v) in de_t.row_mut(j).iter_mut().zip(ex) {
                    *d += dc * v;
                }
            }
        }
        let dy_x = normalize_backward(&fwd.e_x, &fwd.norm_x, &de_x);
        let dy_t = normalize_backward(&fwd.e_t, &fwd.norm_t, &de_t);
        let (vision, _) = head_backward(&heads.vision, &fwd.tape_v, &dy_x)?;
        let (text, _) = head_backward(&heads.text, &fwd.tape_t, &dy_t)?;
        Ok(HeadGrads { vision, text })
    }
}

/// Base frame scores for one class under the given heads.
pub fn descriptor_scores(b: &VideoBundle, class_id: &str, heads: &Heads) -> Result<Vec<f64>> {
    let p = ScoreProblem::from_bundle(b, class_id, &GuidanceSplit::empty(), 0.0, true)?;
    Ok(p.forward(heads)?.base)
}

/// Adds the triplet term to precomputed base scores `s`.
pub fn refine_scores(
    s: &[f64],
    b: &VideoBundle,
    split: &GuidanceSplit,
    alpha: f64,
    heads: &Heads,
) -> Result<Vec<f64>> {
    if s.len() != b.n_frames() {
        return Err(Error::DimensionMismatch {
            context: "base score length".into(),
            expected: b.n_frames(),
            found: s.len(),
        });
    }
    if split.is_empty() {
        return Ok(s.to_vec());
    }
    let mut rows = Vec::new();
    for id in split.affine_ids.iter().chain(&split.distractor_ids) {
        rows.push(pre_head(b.text(id).ok_or_else(|| Error::UnknownLabel(id.clone()))?)?);
    }
    let texts = Tensor::from_rows(&rows.iter().map(|t| t.values()).collect::<Vec<_>>())?;
    let (y_x, _) = head_forward(&heads.vision, &b.frame_pre_head)?;
    let (y_t, _) = head_forward(&heads.text, &texts)?;
    let (e_x, _) = normalize(&y_x)?;
    let (e_t, _) = normalize(&y_t)?;
    let (na, nd) = (split.affine_ids.len(), split.distractor_ids.len());
    let (scale, bias) = (b.logit_scale, b.logit_bias);
    Ok(s.iter()
        .enumerate()
        .map(|(i, &si)| {
            let pi = |j: usize| logistic(scale * dot(e_x.row(i), e_t.row(j)) + bias);
            let aff = (0..na).map(pi).sum::<f64>() / na as f64;
            let dis = (na..na + nd).map(pi).sum::<f64>() / nd as f64;
            si + alpha * (aff - dis)
        })
        .collect())
}
