//! Scene-triplet guidance: deduplication by k-means, the affine/distractor
//! split against a class, and the caption ambiguity scan.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine, norm};
use crate::tensor::Tensor;

pub const MAX_ITERATIONS: usize = 100;
pub const MIN_IMPROVEMENT: f64 = 1e-9;

/// Terms that hedge whether an action is actually happening.
pub const DEFAULT_LEXICON: &[&str] = &["likely", "probably", "preparing to"];

/// A larger lexicon shipped alongside the default one.
pub const EXTENDED_LEXICON: &str = include_str!("../data/ambiguity_extended.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSummary {
    /// Ids of the member nearest each non-empty cluster's centroid, in
    /// cluster order.
    pub representative_ids: Vec<String>,
    /// Index into the input rows of each representative.
    pub representative_rows: Vec<usize>,
    /// `S x d_s` centroids (empty clusters keep their last position).
    pub centroids: Vec<Vec<f64>>,
    /// Triplet id to cluster index.
    pub assignment: BTreeMap<String, usize>,
    /// Cluster index per input row.
    pub labels: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl TripletSummary {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }

    /// Representative id of the cluster holding `triplet_id`.
    pub fn representative_of(&self, triplet_id: &str) -> Option<&str> {
        let c = *self.assignment.get(triplet_id)?;
        self.representative_ids
            .iter()
            .zip(&self.representative_rows)
            .find(|(_, &row)| self.labels[row] == c)
            .map(|(id, _)| id.as_str())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, ties to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre. When every remaining point
/// coincides with a centre, the lowest-index unchosen row is taken.
pub fn kmeans_plus_plus(points: &[&[f64]], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let m = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; m];
    let first = rng.random_range(0..m);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[first])).collect();
    while centroids.len() < k.min(m) {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` a hair below `target`
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            (0..m).find(|&i| !chosen[i]).unwrap()
        };
        chosen[pick] = true;
        centroids.push(points[pick].to_vec());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points[pick]));
        }
    }
    centroids
}

/// Lloyd iterations from given centroids. Returns final centroids, labels
/// and the inertia after each assignment step.
pub fn lloyd(points: &[&[f64]], mut centroids: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
    let d = points.first().map_or(0, |p| p.len());
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut next = Vec::with_capacity(points.len());
        let mut inertia = 0.0;
        for p in points {
            let (j, dist) = nearest(p, &centroids);
            next.push(j);
            inertia += dist;
        }
        let unchanged = next == labels;
        labels = next;
        let improvement = history.last().map(|prev: &f64| prev - inertia);
        history.push(inertia);
        if unchanged || improvement.is_some_and(|x| x < MIN_IMPROVEMENT) {
            break;
        }
        let mut sums = vec![vec![0.0; d]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for (j, c) in centroids.iter_mut().enumerate() {
            if counts[j] > 0 {
                for (cv, s) in c.iter_mut().zip(&sums[j]) {
                    *cv = s / counts[j] as f64;
                }
            }
        }
    }
    (centroids, labels, history)
}

/// Deduplicates triplets by clustering their sentence embeddings into at most
/// `s` groups and keeping the member nearest each centroid.
pub fn cluster_triplets(ids: &[String], embeddings: &Tensor, s: usize, seed: u64) -> Result<TripletSummary> {
    if s == 0 {
        return Err(Error::InvalidArgument("number of clusters must be positive".into()));
    }
    let m = embeddings.rows();
    if ids.len() != m {
        return Err(Error::DimensionMismatch {
            context: "triplet ids vs embedding rows".into(),
            expected: m,
            found: ids.len(),
        });
    }
    let points: Vec<&[f64]> = (0..m).map(|i| embeddings.row(i)).collect();

    let (centroids, labels, history) = if m <= s {
        (
            points.iter().map(|p| p.to_vec()).collect(),
            (0..m).collect(),
            vec![0.0],
        )
    } else {
        let init = kmeans_plus_plus(&points, s, seed);
        lloyd(&points, init)
    };

    let mut representative_ids = Vec::new();
    let mut representative_rows = Vec::new();
    for (j, c) in centroids.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (i, &l) in labels.iter().enumerate() {
            if l != j {
                continue;
            }
            let d = sq_dist(points[i], c);
            best = match best {
                None => Some((d, i)),
                Some((bd, bi)) if d < bd || (d == bd && ids[i] < ids[bi]) => Some((d, i)),
                keep => keep,
            };
        }
        if let Some((_, i)) = best {
            representative_ids.push(ids[i].clone());
            representative_rows.push(i);
        }
    }
    let assignment = ids.iter().cloned().zip(labels.iter().copied()).collect();
    Ok(TripletSummary {
        representative_ids,
        representative_rows,
        centroids,
        assignment,
        labels,
        inertia_history: history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSplit {
    pub affine_ids: Vec<String>,
    pub distractor_ids: Vec<String>,
    /// Cosine of each representative to the class, in representative order.
    pub similarity_to_class: Vec<(String, f64)>,
}

impl GuidanceSplit {
    pub fn is_empty(&self) -> bool {
        self.affine_ids.is_empty() || self.distractor_ids.is_empty()
    }

    pub fn empty() -> Self {
        Self {
            affine_ids: Vec::new(),
            distractor_ids: Vec::new(),
            similarity_to_class: Vec::new(),
        }
    }
}

/// Ranks representatives by cosine to the class sentence embedding and takes
/// the top `k` as affine and the bottom `k` as distractors. Ties go to the
/// lowest id.
pub fn split_affine_distractor(
    representatives: &[(String, Option<&Tensor>)],
    class_embedding: &Tensor,
    k: usize,
) -> Result<GuidanceSplit> {
    if 2 * k > representatives.len() {
        return Err(Error::InvalidArgument(format!(
            "k_triplets = {k} needs at least {} representatives, have {}",
            2 * k,
            representatives.len()
        )));
    }
    if norm(class_embedding.values()) == 0.0 {
        return Err(Error::ZeroNorm { row: 0 });
    }
    let mut sims = Vec::with_capacity(representatives.len());
    for (id, emb) in representatives {
        let emb = emb.ok_or_else(|| Error::MissingEmbedding {
            id: id.clone(),
            field: "sentence_embedding",
        })?;
        sims.push((id.clone(), cosine(emb.values(), class_embedding.values())?));
    }
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].1.total_cmp(&sims[a].1).then_with(|| sims[a].0.cmp(&sims[b].0)));
    let affine_ids = order[..k].iter().map(|&i| sims[i].0.clone()).collect();
    let distractor_ids = order[order.len() - k..]
        .iter()
        .map(|&i| sims[i].0.clone())
        .collect();
    Ok(GuidanceSplit {
        affine_ids,
        distractor_ids,
        similarity_to_class: sims,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityReport {
    pub total_captions: usize,
    pub flagged_captions: usize,
    pub fraction: f64,
    /// Matched terms per caption, in input order (empty when not flagged).
    pub matched_terms: Vec<Vec<String>>,
}

/// Case-insensitive match of `term` in `text` on word boundaries.
fn contains_phrase(text: &str, term: &str) -> bool {
    if term.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = text[from..].find(term) {
        let start = from + pos;
        let end = start + term.len();
        let before_ok = text[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = start + text[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

pub fn ambiguity_scan<S: AsRef<str>, T: AsRef<str>>(captions: &[S], lexicon: &[T]) -> Result<AmbiguityReport> {
    if lexicon.is_empty() {
        return Err(Error::InvalidArgument("ambiguity lexicon is empty".into()));
    }
    let terms: Vec<String> = lexicon
        .iter()
        .map(|t| t.as_ref().split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
        .collect();
    let mut matched_terms = Vec::with_capacity(captions.len());
    for c in captions {
        let text = c.as_ref().split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        matched_terms.push(
            terms
                .iter()
                .filter(|t| contains_phrase(&text, t))
                .cloned()
                .collect::<Vec<_>>(),
        );
    }
    let flagged = matched_terms.iter().filter(|m| !m.is_empty()).count();
    let total = captions.len();
    Ok(AmbiguityReport {
        total_captions: total,
        flagged_captions: flagged,
        fraction: if total > 0 { flagged as f64 / total as f64 } else { 0.0 },
        matched_terms,
    })
}

/// One term per line; `#` starts a comment.
pub fn parse_lexicon(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn read_lexicon(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_lexicon(&text))
}
