use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tgloc_cli::eval::{cmd_eval, cmd_eval_splits, parse_thresholds, EvalOptions};
use tgloc_cli::run::{cmd_run, cmd_sweep, parse_sweep, RunOptions, SweepOptions};
use tgloc_cli::splits::cmd_splits;
use tgloc_cli::{
    cmd_analyze, cmd_gradcheck, cmd_synth, gradcheck_summary, resolve_config, AnalyzeOptions, CliResult, Failure,
    SynthOptions, EXIT_INTERNAL,
};

/// Test-time adaptation for zero-shot temporal action localization.
#[derive(Parser)]
#[command(name = "tgloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Localize actions in every bundle under a directory.
    Run {
        bundles: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Stop at the first unreadable or failing bundle.
        #[arg(long)]
        strict: bool,
        /// Write per-video score traces into this directory.
        #[arg(long, value_name = "DIR")]
        trace_scores: Option<PathBuf>,
        /// Write per-video class rankings (for top-k accuracy) to this file.
        #[arg(long)]
        rankings: Option<PathBuf>,
        /// `key=v1,v2,...`: run once per value and write a mAP CSV to --out.
        #[arg(long)]
        sweep: Option<String>,
        /// Thresholds for --sweep: thumos, anet or a comma list.
        #[arg(long, default_value = "thumos")]
        thresholds: String,
        /// Ground truth for --sweep; defaults to the bundles' annotations.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Compute mAP of a predictions file.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// thumos, anet, or a comma-separated list.
        #[arg(long, default_value = "thumos")]
        thresholds: String,
        /// Class list file restricting evaluation.
        #[arg(long)]
        class_filter: Option<PathBuf>,
        /// Splits file: evaluate each split's unseen classes and average.
        #[arg(long, conflicts_with = "class_filter")]
        splits: Option<PathBuf>,
        #[arg(long)]
        rankings: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Frame/text similarity by frame group, and the caption ambiguity scan.
    Analyze {
        bundles: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        transition_seconds: f64,
        #[arg(long, default_value_t = 20)]
        s_clusters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Lexicon file, one term per line.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, conflicts_with = "lexicon")]
        extended_lexicon: bool,
    },
    /// Write synthetic bundles and their ground truth.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        videos: usize,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Seeded seen/unseen class splits.
    Splits {
        classes: PathBuf,
        /// Fraction of seen classes.
        #[arg(long, default_value_t = 0.75)]
        fraction: f64,
        #[arg(long, default_value_t = 10)]
        n_splits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Check every analytic gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        /// Deliberately perturb one check's gradient.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn execute(command: Command) -> CliResult<i32> {
    match command {
        Command::Run {
            bundles,
            out,
            config,
            parallel,
            strict,
            trace_scores,
            rankings,
            sweep,
            thresholds,
            gt,
        } => {
            let opts = RunOptions {
                bundles,
                out,
                config: resolve_config(config.config.as_deref(), &config.overrides, config.seed)?,
                parallel,
                strict,
                trace_scores,
                rankings,
            };
            if let Some(spec) = sweep {
                let (key, values) = parse_sweep(&spec)?;
                let sweep = SweepOptions {
                    key,
                    values,
                    thresholds: parse_thresholds(&thresholds)?,
                    gt,
                };
                print!("{}", cmd_sweep(&opts, &sweep)?);
                return Ok(0);
            }
            let summary = cmd_run(&opts)?;
            let n: usize = summary.results.iter().map(|r| r.proposals.len()).sum();
            println!("{} videos, {n} proposals -> {}", summary.results.len(), opts.out.display());
            for line in summary.failure_lines() {
                eprintln!("{line}");
            }
            Ok(summary.exit_code())
        }
        Command::Eval {
            pred,
            gt,
            thresholds,
            class_filter,
            splits,
            rankings,
            out,
        } => {
            let opts = EvalOptions {
                predictions: pred,
                ground_truth: gt,
                thresholds: parse_thresholds(&thresholds)?,
                class_filter,
                rankings,
                out,
            };
            if let Some(path) = splits {
                let r = cmd_eval_splits(&opts, &path)?;
                for (i, rep) in r.reports.iter().enumerate() {
                    println!("split {i}: avg mAP {:.3}", rep.average_map);
                }
                println!("mean over {} splits: avg mAP {:.3}", r.reports.len(), r.mean_average_map);
            } else {
                let report = cmd_eval(&opts)?;
                print!("{}", report.to_table());
                println!("avg mAP {:.3}", report.average_map);
            }
            Ok(0)
        }
        Command::Analyze {
            bundles,
            out,
            transition_seconds,
            s_clusters,
            seed,
            lexicon,
            extended_lexicon,
        } => {
            let r = cmd_analyze(&AnalyzeOptions {
                bundles,
                out,
                transition_seconds,
                s_clusters,
                seed,
                lexicon,
                extended: extended_lexicon,
            })?;
            for c in &r.analysis.coverage {
                println!("{:<16} {}/{} frames covered", c.mode.name(), c.covered, c.total);
            }
            println!(
                "ambiguous captions: {}/{} ({:.1}%)",
                r.ambiguity.flagged_captions,
                r.ambiguity.total_captions,
                100.0 * r.ambiguity.fraction
            );
            for v in &r.skipped {
                eprintln!("{v}: no annotations, skipped");
            }
            Ok(0)
        }
        Command::Synth {
            out,
            videos,
            frames,
            classes,
            noise,
            seed,
        } => {
            let ids = cmd_synth(&SynthOptions {
                out: out.clone(),
                videos,
                frames,
                classes,
                noise,
                seed,
            })?;
            println!("{} bundles -> {}", ids.len(), out.display());
            Ok(0)
        }
        Command::Splits {
            classes,
            fraction,
            n_splits,
            seed,
            out,
        } => {
            let set = cmd_splits(&classes, fraction, n_splits, seed, &out)?;
            let unseen = set.splits.first().map_or(0, |s| s.unseen.len());
            println!("{} splits, {unseen} unseen classes each -> {}", set.splits.len(), out.display());
            Ok(0)
        }
        Command::Gradcheck {
            seed,
            instances,
            corrupt,
        } => {
            let report = cmd_gradcheck(seed, instances, corrupt)?;
            print!("{}", gradcheck_summary(&report));
            let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            if failed.is_empty() {
                Ok(0)
            } else {
                Err(Failure::internal(format!("gradient check failed: {}", failed.join(", "))))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(if f.code == 0 { EXIT_INTERNAL } else { f.code } as u8)
        }
    }
}
