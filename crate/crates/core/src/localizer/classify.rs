use serde::{Deserialize, Serialize};

use super::Heads;
use crate::bundle::VideoBundle;
use crate::error::{Error, Result};
use crate::head::{dot, head_forward};
use crate::linalg::{l2_normalize_rows, norm, softmax};
use crate::tensor::Tensor;

/// Video-level class ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRanking {
    /// Class ids sorted by id; `similarity` and `confidence` follow this order.
    pub class_ids: Vec<String>,
    /// Cosine between the mean frame embedding and each class embedding.
    pub similarity: Vec<f64>,
    /// Softmax of `similarity` over all classes.
    pub confidence: Vec<f64>,
    /// Class ids by descending similarity, ties to the lowest id.
    pub ranked: Vec<String>,
    /// The first `min(k_actions, Z)` entries of `ranked`.
    pub selected: Vec<String>,
}

impl ClassRanking {
    pub fn confidence_of(&self, class_id: &str) -> Option<f64> {
        self.class_ids
            .iter()
            .position(|c| c == class_id)
            .map(|i| self.confidence[i])
    }

    pub fn top_confidence(&self) -> f64 {
        self.confidence_of(&self.ranked[0]).unwrap_or(0.0)
    }
}

/// Unit-normalized frame embeddings through the vision head.
pub fn frame_embeddings(b: &VideoBundle, heads: &Heads) -> Result<Tensor> {
    let (y, _) = head_forward(&heads.vision, &b.frame_pre_head)?;
    l2_normalize_rows(&y)
}

/// Unit-normalized text embeddings through the text head.
pub fn text_embeddings(rows: &[&Tensor], heads: &Heads) -> Result<Tensor> {
    let x = Tensor::from_rows(&rows.iter().map(|t| t.values()).collect::<Vec<_>>())?;
    let (y, _) = head_forward(&heads.text, &x)?;
    l2_normalize_rows(&y)
}

pub fn classify_video(b: &VideoBundle, heads: &Heads, k_actions: usize) -> Result<ClassRanking> {
    let classes = b.classes();
    if classes.is_empty() {
        return Err(Error::NoClasses);
    }
    let mut pre = Vec::with_capacity(classes.len());
    for c in &classes {
        pre.push(c.pre_head.as_ref().ok_or_else(|| Error::MissingEmbedding {
            id: c.id.clone(),
            field: "pre_head",
        })?);
    }
    let e_c = text_embeddings(&pre, heads)?;
    let e_x = frame_embeddings(b, heads)?;
    let n = e_x.rows();
    let mut mean = vec![0.0; e_x.cols()];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(e_x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mn = norm(&mean);
    if mn == 0.0 {
        return Err(Error::ZeroNorm { row: 0 });
    }
    let similarity: Vec<f64> = (0..classes.len())
        .map(|j| dot(&mean, e_c.row(j)) / mn)
        .collect();
    let confidence = softmax(&similarity);
    let class_ids: Vec<String> = classes.iter().map(|c| c.id.clone()).collect();
    let mut order: Vec<usize> = (0..class_ids.len()).collect();
    order.sort_by(|&a, &b| {
        similarity[b]
            .total_cmp(&similarity[a])
            .then_with(|| class_ids[a].cmp(&class_ids[b]))
    });
    let ranked: Vec<String> = order.iter().map(|&i| class_ids[i].clone()).collect();
    let selected = ranked[..k_actions.min(ranked.len())].to_vec();
    Ok(ClassRanking {
        class_ids,
        similarity,
        confidence,
        ranked,
        selected,
    })
}
