//! `tgloc run`: localization over a directory of bundles.
//!
//! Bundles are loaded and localized on a worker pool; results are collected
//! in directory order and then sorted by video id, so the output file does
//! not depend on the pool size or on how the directory is laid out.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tgloc_core::metrics::{map_report, GroundTruth};
use tgloc_core::results::{ground_truth_from, predictions_from, predictions_to_json, read_ground_truth};
use tgloc_core::{load_bundle, localize, Error, RunConfig, VideoBundle, VideoResult};

use crate::{bundle_dirs, thread_pool, write_file, CliResult, Failure, EXIT_INVALID};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub bundles: PathBuf,
    pub out: PathBuf,
    pub config: RunConfig,
    pub parallel: usize,
    /// Abort on the first bundle failure instead of listing it and carrying on.
    pub strict: bool,
    /// Directory receiving one `<video_id>.json` score trace per video.
    pub trace_scores: Option<PathBuf>,
    /// File receiving the per-video class ranking, for top-k accuracy.
    pub rankings: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(bundles: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            bundles: bundles.into(),
            out: out.into(),
            config: RunConfig::default(),
            parallel: 1,
            strict: false,
            trace_scores: None,
            rankings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleFailure {
    pub path: PathBuf,
    pub code: i32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub results: Vec<VideoResult>,
    pub failures: Vec<BundleFailure>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures.iter().any(|f| f.code == EXIT_INVALID) {
            EXIT_INVALID
        } else {
            self.failures.first().map_or(0, |f| f.code)
        }
    }

    pub fn failure_lines(&self) -> Vec<String> {
        self.failures.iter().map(|f| format!("{}: {}", f.path.display(), f.message)).collect()
    }
}

fn failure(path: &Path, e: &Error) -> BundleFailure {
    BundleFailure {
        path: path.to_path_buf(),
        code: crate::exit_code(e),
        message: e.to_string(),
    }
}

fn abort_on(failures: &[BundleFailure]) -> CliResult<()> {
    if failures.is_empty() {
        return Ok(());
    }
    let summary = RunSummary {
        results: Vec::new(),
        failures: failures.to_vec(),
    };
    Err(Failure {
        code: summary.exit_code(),
        message: summary.failure_lines().join("\n"),
    })
}

/// Loaded bundles with their directories, and the bundles that failed.
pub type Loaded = (Vec<(PathBuf, VideoBundle)>, Vec<BundleFailure>);

/// Loads every bundle under `root` on `parallel` workers. Failures are
/// returned alongside the loaded bundles, both in directory order.
pub fn load_bundles(root: &Path, parallel: usize) -> CliResult<Loaded> {
    let dirs = bundle_dirs(root)?;
    let pool = thread_pool(parallel)?;
    let loaded: Vec<_> = pool.install(|| dirs.par_iter().map(load_bundle).collect());
    let (mut ok, mut failed) = (Vec::new(), Vec::new());
    for (dir, r) in dirs.into_iter().zip(loaded) {
        match r {
            Ok(b) => ok.push((dir, b)),
            Err(e) => failed.push(failure(&dir, &e)),
        }
    }
    Ok((ok, failed))
}

/// Localizes every bundle; the output is sorted by video id.
pub fn localize_bundles(
    bundles: &[(PathBuf, VideoBundle)],
    cfg: &RunConfig,
    parallel: usize,
) -> CliResult<(Vec<VideoResult>, Vec<BundleFailure>)> {
    let pool = thread_pool(parallel)?;
    let outcomes: Vec<_> = pool.install(|| bundles.par_iter().map(|(_, b)| localize(b, cfg)).collect());
    let (mut ok, mut failed) = (Vec::new(), Vec::new());
    for ((dir, _), r) in bundles.iter().zip(outcomes) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push(failure(dir, &e)),
        }
    }
    ok.sort_by(|a: &VideoResult, b| a.video_id.cmp(&b.video_id));
    if let Some(w) = ok.windows(2).find(|w| w[0].video_id == w[1].video_id) {
        return Err(Failure::invalid(format!("video id {:?} appears in more than one bundle", w[0].video_id)));
    }
    Ok((ok, failed))
}

pub fn results_json(results: &[VideoResult]) -> String {
    let preds: Vec<_> = results.iter().flat_map(|r| predictions_from(&r.video_id, &r.proposals)).collect();
    predictions_to_json(&preds)
}

pub fn rankings_json(results: &[VideoResult]) -> String {
    let map: BTreeMap<&str, &[String]> = results.iter().map(|r| (r.video_id.as_str(), r.ranking.ranked.as_slice())).collect();
    let mut s = serde_json::to_string_pretty(&map).expect("strings serialize");
    s.push('\n');
    s
}

/// Video ids become file names; anything outside `[A-Za-z0-9._-]` is
/// replaced.
fn file_stem(video_id: &str) -> String {
    video_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

pub fn write_traces(dir: &Path, results: &[VideoResult]) -> CliResult<()> {
    for r in results {
        let mut s = serde_json::to_string_pretty(&r.traces).map_err(|e| Failure::internal(e.to_string()))?;
        s.push('\n');
        write_file(&dir.join(format!("{}.json", file_stem(&r.video_id))), &s)?;
    }
    Ok(())
}

/// Runs localization and writes the results file. Per-bundle failures are
/// reported in the summary (the caller decides the exit code) unless
/// `strict`, in which case nothing is written.
pub fn cmd_run(opts: &RunOptions) -> CliResult<RunSummary> {
    opts.config.validate()?;
    let (bundles, mut failures) = load_bundles(&opts.bundles, opts.parallel)?;
    if opts.strict {
        abort_on(&failures)?;
    }
    let (results, more) = localize_bundles(&bundles, &opts.config, opts.parallel)?;
    failures.extend(more);
    if opts.strict {
        abort_on(&failures)?;
    }
    write_file(&opts.out, &results_json(&results))?;
    if let Some(path) = &opts.rankings {
        write_file(path, &rankings_json(&results))?;
    }
    if let Some(dir) = &opts.trace_scores {
        write_traces(dir, &results)?;
    }
    Ok(RunSummary { results, failures })
}

/// Splits `key=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> CliResult<(String, Vec<String>)> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Failure::invalid(format!("sweep {spec:?} is not key=v1,v2,...")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Failure::invalid(format!("sweep {spec:?} lists no values")));
    }
    Ok((key.trim().to_string(), values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub key: String,
    pub values: Vec<String>,
    pub thresholds: Vec<f64>,
    /// Ground truth file; the bundles' own annotations when absent.
    pub gt: Option<PathBuf>,
}

/// One CSV row per swept value: the value, the effective `k_triplets`, mAP
/// at each threshold and their average. Any bundle failure aborts, since
/// rows over different video sets would not be comparable.
pub fn cmd_sweep(opts: &RunOptions, sweep: &SweepOptions) -> CliResult<String> {
    let (bundles, failures) = load_bundles(&opts.bundles, opts.parallel)?;
    abort_on(&failures)?;
    let gts: Vec<GroundTruth> = match &sweep.gt {
        Some(p) => read_ground_truth(p)?,
        None => bundles.iter().flat_map(|(_, b)| ground_truth_from(b)).collect(),
    };
    // every class any bundle can predict, so classes without ground truth
    // in this video set are admitted rather than rejected as unknown
    let vocabulary: BTreeSet<String> = bundles
        .iter()
        .flat_map(|(_, b)| b.classes().into_iter().map(|c| c.id.clone()))
        .chain(gts.iter().map(|g| g.label.clone()))
        .collect();
    let mut csv = format!("{},k_triplets", sweep.key);
    for t in &sweep.thresholds {
        csv.push_str(&format!(",map@{t:.2}"));
    }
    csv.push_str(",average_map\n");
    for value in &sweep.values {
        let mut cfg = opts.config.clone();
        cfg.set(&sweep.key, value)?;
        // k_triplets may not exceed s_clusters; small cluster counts take
        // the largest valid k instead of failing the whole sweep
        cfg.k_triplets = cfg.k_triplets.min(cfg.s_clusters);
        cfg.validate()?;
        let (results, failures) = localize_bundles(&bundles, &cfg, opts.parallel)?;
        abort_on(&failures)?;
        let preds: Vec<_> = results.iter().flat_map(|r| predictions_from(&r.video_id, &r.proposals)).collect();
        let report = map_report(&preds, &gts, &sweep.thresholds, Some(&vocabulary), None)?;
        csv.push_str(&format!("{value},{}", cfg.k_triplets));
        for m in &report.map {
            csv.push_str(&format!(",{m:.6}"));
        }
        csv.push_str(&format!(",{:.6}\n", report.average_map));
    }
    write_file(&opts.out, &csv)?;
    Ok(csv)
}
