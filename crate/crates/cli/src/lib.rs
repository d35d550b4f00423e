//! Library side of the `tgloc` command line: each subcommand is a plain
//! function so tests and the acceptance suite can call it without spawning
//! a process.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use tgloc_core::bundle::{load_bundle, save_bundle, TextRole};
use tgloc_core::gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
use tgloc_core::guidance::{ambiguity_scan, parse_lexicon, read_lexicon, AmbiguityReport, DEFAULT_LEXICON, EXTENDED_LEXICON};
use tgloc_core::metrics::{similarity_analysis, SimilarityAnalysis};
use tgloc_core::results::{ground_truth_from, ground_truth_to_json};
use tgloc_core::synth::{class_label, synth_bundle, SynthSpec};
use tgloc_core::{Error, RunConfig};

pub mod eval;
pub mod run;
pub mod splits;

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

/// A command failure carrying its process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }

    pub(crate) fn with_context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Numerical blow-ups are internal failures; everything else traces back to
/// the inputs.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Video { source, .. } => exit_code(source),
        Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } => EXIT_INTERNAL,
        _ => EXIT_INVALID,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub(crate) fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::invalid(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

pub(crate) fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

/// Config file (if any), then `key=value` overrides in order, then `--seed`.
pub fn resolve_config(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = match file {
        Some(p) => RunConfig::from_text(&read_file(p)?).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    for kv in overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Bundle directories under `root`, sorted by path. `root` itself counts
/// when it holds a manifest; otherwise every subdirectory is taken as a
/// bundle, so a stray directory shows up as a load failure rather than
/// being skipped silently.
pub fn bundle_dirs(root: &Path) -> CliResult<Vec<PathBuf>> {
    if root.join(tgloc_core::bundle::MANIFEST).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = fs::read_dir(root).map_err(|e| Failure::invalid(format!("{}: {e}", root.display())))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::invalid(format!("{}: {e}", root.display())))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Failure::invalid(format!("no bundles under {}", root.display())));
    }
    Ok(dirs)
}

pub(crate) fn thread_pool(parallel: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Failure::internal(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub out: PathBuf,
    pub videos: usize,
    pub frames: usize,
    pub classes: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            out: PathBuf::from("synthetic"),
            videos: 20,
            frames: 200,
            classes: 4,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Writes `videos` bundles (video `i` drawn from seed `seed + i`), a
/// `ground_truth.json` built from their annotations and a `classes.txt`
/// vocabulary for `eval --class-filter`. Returns the video ids.
pub fn cmd_synth(opts: &SynthOptions) -> CliResult<Vec<String>> {
    let mut ids = Vec::with_capacity(opts.videos);
    let mut gts = Vec::new();
    for i in 0..opts.videos {
        let seed = opts.seed.wrapping_add(i as u64);
        let b = synth_bundle(seed, &SynthSpec::random(seed, opts.frames, opts.classes, opts.noise))?;
        save_bundle(&b, opts.out.join(&b.video_id))?;
        gts.extend(ground_truth_from(&b));
        ids.push(b.video_id);
    }
    write_file(&opts.out.join("ground_truth.json"), &ground_truth_to_json(&gts))?;
    let vocab: String = (0..opts.classes).map(|i| class_label(i) + "\n").collect();
    write_file(&opts.out.join("classes.txt"), &vocab)?;
    Ok(ids)
}

pub fn cmd_gradcheck(seed: u64, instances: usize, corrupt: Option<String>) -> CliResult<GradcheckReport> {
    let report = run_gradcheck(&GradcheckOptions {
        seed,
        instances,
        corrupt,
        ..Default::default()
    })
    .map_err(|e| Failure::internal(e.to_string()))?;
    Ok(report)
}

pub fn gradcheck_summary(report: &GradcheckReport) -> String {
    let mut out = format!("{:<16}  {:>9}  {:>8}  {:>13}  result\n", "check", "instances", "excluded", "max rel error");
    for c in &report.checks {
        out.push_str(&format!(
            "{:<16}  {:>9}  {:>8}  {:>13.3e}  {}\n",
            c.name,
            c.instances,
            c.excluded,
            c.max_rel_error,
            if c.passed { "pass" } else { "FAIL" }
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    pub bundles: PathBuf,
    pub out: PathBuf,
    pub transition_seconds: f64,
    pub s_clusters: usize,
    pub seed: u64,
    pub lexicon: Option<PathBuf>,
    /// Use the bundled extended lexicon instead of the three default terms.
    pub extended: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeReport {
    pub analysis: SimilarityAnalysis,
    pub ambiguity: AmbiguityReport,
    /// Bundles left out of the similarity analysis (no annotations).
    pub skipped: Vec<String>,
}

/// Similarity analysis merged over all annotated bundles (CSV to `out`)
/// and an ambiguity scan over every caption.
pub fn cmd_analyze(opts: &AnalyzeOptions) -> CliResult<AnalyzeReport> {
    let lexicon = match (&opts.lexicon, opts.extended) {
        (Some(p), _) => read_lexicon(p)?,
        (None, true) => parse_lexicon(EXTENDED_LEXICON),
        (None, false) => DEFAULT_LEXICON.iter().map(|s| s.to_string()).collect(),
    };
    let mut parts = Vec::new();
    let mut captions = Vec::new();
    let mut skipped = Vec::new();
    for dir in bundle_dirs(&opts.bundles)? {
        let b = load_bundle(&dir).map_err(|e| Failure::from(e).with_context(&dir))?;
        captions.extend(b.items_with_role(TextRole::Caption).iter().map(|c| c.text.clone()));
        if b.annotations.as_ref().is_none_or(|a| a.is_empty()) {
            skipped.push(b.video_id.clone());
            continue;
        }
        parts.push(similarity_analysis(&b, opts.transition_seconds, opts.s_clusters, opts.seed).map_err(|e| e.in_video(&b.video_id))?);
    }
    if parts.is_empty() {
        return Err(Failure::invalid("no annotated bundles to analyze"));
    }
    let analysis = SimilarityAnalysis::merge(&parts);
    write_file(&opts.out, &analysis.to_csv())?;
    let ambiguity = ambiguity_scan(&captions, &lexicon)?;
    Ok(AnalyzeReport {
        analysis,
        ambiguity,
        skipped,
    })
}
