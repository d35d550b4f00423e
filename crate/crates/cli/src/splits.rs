//! Seeded seen/unseen class partitions for split evaluation.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tgloc_core::synth::seeded_shuffle;

use crate::{read_file, write_file, CliResult, Failure};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    /// Fraction of classes that are seen.
    pub fraction: f64,
    pub seed: u64,
    pub splits: Vec<ClassSplit>,
}

/// One class per line; blank lines and `#` comments ignored, duplicates
/// rejected.
pub fn parse_class_list(text: &str) -> CliResult<Vec<String>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for line in text.lines() {
        let name = line.split('#').next().unwrap_or("").trim();
        if name.is_empty() {
            continue;
        }
        if !seen.insert(name) {
            return Err(Failure::invalid(format!("class {name:?} listed twice")));
        }
        out.push(name.to_string());
    }
    Ok(out)
}

pub fn read_class_list(path: &Path) -> CliResult<Vec<String>> {
    parse_class_list(&read_file(path)?).map_err(|f| f.with_context(path))
}

/// `round((1 - fraction) * z)`, at least one, and leaving at least one
/// seen class.
pub fn unseen_count(z: usize, fraction: f64) -> CliResult<usize> {
    if z < 2 {
        return Err(Failure::invalid(format!("need at least 2 classes, got {z}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Failure::invalid(format!("fraction must lie in (0, 1), got {fraction}")));
    }
    let n = (((1.0 - fraction) * z as f64).round() as usize).max(1);
    if n >= z {
        return Err(Failure::invalid(format!(
            "fraction {fraction} leaves no seen classes among {z}"
        )));
    }
    Ok(n)
}

fn split_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64).rotate_left(17)
}

/// `n_splits` partitions; classes are sorted first so the input order of
/// the list does not matter.
pub fn make_splits(classes: &[String], fraction: f64, n_splits: usize, seed: u64) -> CliResult<SplitSet> {
    let n_unseen = unseen_count(classes.len(), fraction)?;
    let mut sorted = classes.to_vec();
    sorted.sort();
    let splits = (0..n_splits)
        .map(|i| {
            let mut order = sorted.clone();
            seeded_shuffle(&mut order, split_seed(seed, i));
            let mut unseen = order.split_off(order.len() - n_unseen);
            order.sort();
            unseen.sort();
            ClassSplit { seen: order, unseen }
        })
        .collect();
    Ok(SplitSet {
        fraction,
        seed,
        splits,
    })
}

pub fn cmd_splits(classes: &Path, fraction: f64, n_splits: usize, seed: u64, out: &Path) -> CliResult<SplitSet> {
    let set = make_splits(&read_class_list(classes)?, fraction, n_splits, seed)?;
    let mut s = serde_json::to_string_pretty(&set).map_err(|e| Failure::internal(e.to_string()))?;
    s.push('\n');
    write_file(out, &s)?;
    Ok(set)
}

pub fn read_splits(path: &Path) -> CliResult<SplitSet> {
    serde_json::from_str(&read_file(path)?).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}
