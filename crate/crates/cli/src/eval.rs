//! `tgloc eval`: mAP over a predictions file against a ground-truth file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tgloc_core::metrics::preset_thresholds;
use tgloc_core::results::{read_ground_truth, read_predictions};
use tgloc_core::{map_report, Error, EvalReport};

use crate::splits::{read_class_list, read_splits};
use crate::{read_file, write_file, CliResult, Failure};

/// `thumos`, `anet`, or a comma-separated list of tIoU thresholds.
pub fn parse_thresholds(spec: &str) -> CliResult<Vec<f64>> {
    if let Ok(preset) = preset_thresholds(spec.trim()) {
        return Ok(preset);
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let t: f64 = part
            .parse()
            .map_err(|_| Failure::invalid(format!("threshold {part:?} is neither a number nor thumos/anet")))?;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Failure::invalid(format!("threshold {t} outside (0, 1]")));
        }
        out.push(t);
    }
    if out.is_empty() {
        return Err(Failure::invalid("no thresholds given"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub predictions: PathBuf,
    pub ground_truth: PathBuf,
    pub thresholds: Vec<f64>,
    /// Class list file restricting the evaluated classes.
    pub class_filter: Option<PathBuf>,
    /// Per-video class rankings written by `run --rankings`.
    pub rankings: Option<PathBuf>,
    /// Report JSON; the CSV goes next to it with a `.csv` extension.
    pub out: PathBuf,
}

fn hint(e: Error) -> Failure {
    let unknown = matches!(e, Error::UnknownLabel(_));
    let mut f = Failure::from(e);
    if unknown {
        f.message.push_str(" (absent from the ground truth; pass the full class list with --class-filter)");
    }
    f
}

fn read_rankings(path: &Path) -> CliResult<BTreeMap<String, Vec<String>>> {
    serde_json::from_str(&read_file(path)?).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn cmd_eval(opts: &EvalOptions) -> CliResult<EvalReport> {
    let preds = read_predictions(&opts.predictions)?;
    let gts = read_ground_truth(&opts.ground_truth)?;
    let filter = match &opts.class_filter {
        Some(p) => Some(read_class_list(p)?.into_iter().collect::<BTreeSet<_>>()),
        None => None,
    };
    let rankings = opts.rankings.as_deref().map(read_rankings).transpose()?;
    let report = map_report(&preds, &gts, &opts.thresholds, filter.as_ref(), rankings.as_ref()).map_err(hint)?;
    write_file(&opts.out, &to_json(&report)?)?;
    write_file(&opts.out.with_extension("csv"), &report.to_csv())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub reports: Vec<EvalReport>,
    /// Average mAP of each split's report, averaged over splits.
    pub mean_average_map: f64,
}

/// Evaluates each split's unseen classes in turn (the class filter of
/// `opts` is ignored) and writes all reports plus their mean.
pub fn cmd_eval_splits(opts: &EvalOptions, splits: &Path) -> CliResult<SplitEvaluation> {
    let set = read_splits(splits)?;
    if set.splits.is_empty() {
        return Err(Failure::invalid(format!("{}: no splits", splits.display())));
    }
    let preds = read_predictions(&opts.predictions)?;
    let gts = read_ground_truth(&opts.ground_truth)?;
    let rankings = opts.rankings.as_deref().map(read_rankings).transpose()?;
    let reports = set
        .splits
        .iter()
        .map(|s| {
            // the split names the whole vocabulary; only unseen classes count
            let unseen: BTreeSet<String> = s.unseen.iter().cloned().collect();
            let known = |label: &str| unseen.contains(label) || s.seen.iter().any(|c| c == label) || gts.iter().any(|g| g.label == label);
            if let Some(p) = preds.iter().find(|p| !known(&p.label)) {
                return Err(Error::UnknownLabel(p.label.clone()));
            }
            let kept: Vec<_> = preds.iter().filter(|p| unseen.contains(&p.label)).cloned().collect();
            map_report(&kept, &gts, &opts.thresholds, Some(&unseen), rankings.as_ref())
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(hint)?;
    let mean_average_map = reports.iter().map(|r| r.average_map).sum::<f64>() / reports.len() as f64;
    let out = SplitEvaluation {
        reports,
        mean_average_map,
    };
    write_file(&opts.out, &to_json(&out)?)?;
    Ok(out)
}
