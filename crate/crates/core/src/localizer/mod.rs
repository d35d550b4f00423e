//! Test-time adaptation and proposal generation for one video.

mod adapt;
mod classify;
mod losses;
mod proposals;
mod scoring;

pub use adapt::{
    adapt, adapt_problem, evaluate_loss, objective_value_and_grad, Heads, LossEval, Objective, ScoreTrace,
};
pub use classify::{classify_video, frame_embeddings, text_embeddings, ClassRanking};
pub use losses::{byol_loss, margin_loss, pseudo_label_count, select_pos_neg, smoothness_loss};
pub use proposals::{extract_proposals, nms, Proposal};
pub use scoring::{descriptor_scores, refine_scores, HeadGrads, ScoreForward, ScoreProblem};

use serde::{Deserialize, Serialize};

use crate::bundle::{TextRole, VideoBundle};
use crate::config::{Reinit, RunConfig};
use crate::error::{Error, Result};
use crate::guidance::{cluster_triplets, split_affine_distractor, GuidanceSplit, TripletSummary};
use crate::tensor::Tensor;

/// Everything produced for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub video_id: String,
    pub ranking: ClassRanking,
    pub proposals: Vec<Proposal>,
    pub traces: Vec<ScoreTrace>,
    pub splits: Vec<(String, GuidanceSplit)>,
}

/// Clusters the video's triplets, or `None` when there are none or the
/// triplet term is disabled.
pub fn video_triplet_summary(b: &VideoBundle, cfg: &RunConfig) -> Result<Option<TripletSummary>> {
    if !cfg.use_triplets {
        return Ok(None);
    }
    let triplets = b.items_with_role(TextRole::Triplet);
    if triplets.is_empty() {
        return Ok(None);
    }
    let ids: Vec<String> = triplets.iter().map(|t| t.id.clone()).collect();
    let mut rows = Vec::with_capacity(triplets.len());
    for t in &triplets {
        rows.push(
            t.sentence_embedding
                .as_ref()
                .ok_or_else(|| Error::MissingEmbedding {
                    id: t.id.clone(),
                    field: "sentence_embedding",
                })?
                .values(),
        );
    }
    let emb = Tensor::from_rows(&rows)?;
    cluster_triplets(&ids, &emb, cfg.s_clusters, cfg.seed).map(Some)
}

/// Affine/distractor split for one class. `k_triplets` is capped at half the
/// number of representatives; a cap of zero yields an empty split.
pub fn class_split(
    b: &VideoBundle,
    class_id: &str,
    summary: Option<&TripletSummary>,
    k_triplets: usize,
) -> Result<GuidanceSplit> {
    let Some(summary) = summary else {
        return Ok(GuidanceSplit::empty());
    };
    let k = k_triplets.min(summary.representative_ids.len() / 2);
    if k == 0 {
        return Ok(GuidanceSplit::empty());
    }
    let class = b
        .class_item(class_id)
        .ok_or_else(|| Error::UnknownLabel(class_id.to_string()))?;
    let class_emb = class.sentence_embedding.as_ref().ok_or_else(|| Error::MissingEmbedding {
        id: class.id.clone(),
        field: "sentence_embedding",
    })?;
    let reps: Vec<(String, Option<&Tensor>)> = summary
        .representative_ids
        .iter()
        .map(|id| (id.clone(), b.text(id).and_then(|t| t.sentence_embedding.as_ref())))
        .collect();
    split_affine_distractor(&reps, class_emb, k)
}

/// Full pipeline for one video: classify, adapt per selected class, extract
/// proposals and suppress overlaps. Deterministic given `cfg.seed`.
pub fn localize(b: &VideoBundle, cfg: &RunConfig) -> Result<VideoResult> {
    localize_inner(b, cfg).map_err(|e| e.in_video(&b.video_id))
}

fn localize_inner(b: &VideoBundle, cfg: &RunConfig) -> Result<VideoResult> {
    cfg.validate()?;
    let initial = Heads::from_bundle(b);
    let mut ranking = classify_video(b, &initial, cfg.k_actions)?;
    if ranking.top_confidence() > cfg.top1_confidence {
        ranking.selected.truncate(1);
    }
    let summary = video_triplet_summary(b, cfg)?;
    let alpha = if cfg.use_triplets { cfg.alpha } else { 0.0 };

    let mut heads = initial.clone();
    let mut proposals = Vec::new();
    let mut traces = Vec::new();
    let mut splits = Vec::new();
    for class_id in &ranking.selected {
        let split = class_split(b, class_id, summary.as_ref(), cfg.k_triplets)?;
        let problem = ScoreProblem::from_bundle(b, class_id, &split, alpha, cfg.use_descriptors)?;
        if cfg.reinit == Reinit::PerClass {
            heads = initial.clone();
        }
        let (adapted, trace) = adapt_problem(&problem, &heads, cfg, class_id)?;
        heads = adapted;
        let conf = ranking.confidence_of(class_id).unwrap_or(0.0);
        proposals.extend(extract_proposals(&trace.final_scores, &b.frame_times, b.fps, class_id, conf));
        traces.push(trace);
        splits.push((class_id.clone(), split));
    }
    Ok(VideoResult {
        video_id: b.video_id.clone(),
        ranking,
        proposals: nms(proposals, cfg.nms_tiou),
        traces,
        splits,
    })
}
