//! Prediction and ground-truth files.
//!
//! Predictions are a JSON array of `{video_id, t_start, t_end, label, score}`.
//! Ground truth is a JSON object mapping each video id to an array of
//! `{t_start, t_end, label}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::bundle::VideoBundle;
use crate::error::{Error, Result};
use crate::localizer::Proposal;
use crate::metrics::{GroundTruth, Prediction};

pub fn predictions_from(video_id: &str, proposals: &[Proposal]) -> Vec<Prediction> {
    proposals
        .iter()
        .map(|p| Prediction {
            video_id: video_id.to_string(),
            t_start: p.t_start,
            t_end: p.t_end,
            label: p.label.clone(),
            score: p.confidence,
        })
        .collect()
}

/// Shortest round-trip form, padded to at least six decimals.
fn number(x: f64) -> String {
    let short = format!("{x}");
    let decimals = short.split_once('.').map_or(0, |(_, d)| d.len());
    if decimals >= 6 || short.contains('e') {
        short
    } else {
        format!("{x:.6}")
    }
}

pub fn predictions_to_json(preds: &[Prediction]) -> String {
    let mut out = String::from("[\n");
    for (i, p) in preds.iter().enumerate() {
        let _ = write!(
            out,
            "  {{\"video_id\": {}, \"t_start\": {}, \"t_end\": {}, \"label\": {}, \"score\": {}}}",
            serde_json::Value::from(p.video_id.as_str()),
            number(p.t_start),
            number(p.t_end),
            serde_json::Value::from(p.label.as_str()),
            number(p.score),
        );
        out.push_str(if i + 1 < preds.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    out
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, predictions_to_json(preds)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Deserialize)]
struct GtRecord {
    t_start: f64,
    t_end: f64,
    label: String,
}

pub fn parse_ground_truth(text: &str, origin: &Path) -> Result<Vec<GroundTruth>> {
    let map: BTreeMap<String, Vec<GtRecord>> = serde_json::from_str(text).map_err(|source| Error::Json {
        path: origin.to_path_buf(),
        source,
    })?;
    Ok(map
        .into_iter()
        .flat_map(|(video_id, recs)| {
            recs.into_iter().map(move |r| GroundTruth {
                video_id: video_id.clone(),
                t_start: r.t_start,
                t_end: r.t_end,
                label: r.label,
            })
        })
        .collect())
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruth>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(&text, path)
}

/// Ground truth carried by a bundle's own annotations.
pub fn ground_truth_from(b: &VideoBundle) -> Vec<GroundTruth> {
    b.annotations()
        .iter()
        .map(|a| GroundTruth {
            video_id: b.video_id.clone(),
            t_start: a.t_start,
            t_end: a.t_end,
            label: a.class_label.clone(),
        })
        .collect()
}

pub fn ground_truth_to_json(gts: &[GroundTruth]) -> String {
    let mut map: BTreeMap<&str, Vec<serde_json::Value>> = BTreeMap::new();
    for g in gts {
        map.entry(&g.video_id).or_default().push(serde_json::json!({
            "t_start": g.t_start,
            "t_end": g.t_end,
            "label": g.label,
        }));
    }
    let mut s = serde_json::to_string_pretty(&map).expect("plain values serialize");
    s.push('\n');
    s
}
