//! Run configuration and its flat `key = value` text form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Max-margin ranking between the weakest positive and strongest negative.
    Margin,
    /// Squared error pulling positives to 1 and negatives to 0.
    Byol,
}

/// Which score sequence the temporal smoothness term penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothTarget {
    Refined,
    Base,
}

/// When the heads are restored to the bundle's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reinit {
    PerClass,
    PerVideo,
}

macro_rules! keyword_enum {
    ($ty:ty, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::Config(format!(
                        "{s:?} is not one of {}",
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(LossKind, "margin" => LossKind::Margin, "byol" => LossKind::Byol);
keyword_enum!(SmoothTarget, "refined" => SmoothTarget::Refined, "base" => SmoothTarget::Base);
keyword_enum!(Reinit, "per_class" => Reinit::PerClass, "per_video" => Reinit::PerVideo);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Number of top-ranked classes localized per video.
    pub k_actions: usize,
    /// Weight of the affine/distractor triplet term in the refined score.
    pub alpha: f64,
    /// Margin of the ranking loss.
    pub gamma: f64,
    /// Weight of the temporal smoothness term.
    pub lambda_tmp: f64,
    /// Adaptation steps per (video, class).
    pub steps_t: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Number of k-means clusters over scene triplets.
    pub s_clusters: usize,
    /// Size of each of the affine and distractor triplet sets.
    pub k_triplets: usize,
    /// Percentile defining the pseudo-label sets, in (0, 50).
    pub percentile_p: f64,
    pub nms_tiou: f64,
    /// Softmax confidence above which only the top class is localized.
    pub top1_confidence: f64,
    pub prompt_template: String,
    pub seed: u64,
    pub loss: LossKind,
    pub smooth_target: SmoothTarget,
    /// Recompute the pseudo-label sets at every step instead of once.
    pub recompute_pseudo_labels: bool,
    pub reinit: Reinit,
    pub use_descriptors: bool,
    pub use_triplets: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k_actions: 2,
            alpha: 0.5,
            gamma: 5.0,
            lambda_tmp: 1e-2,
            steps_t: 10,
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            s_clusters: 20,
            k_triplets: 5,
            percentile_p: 10.0,
            nms_tiou: 0.5,
            top1_confidence: 0.6,
            prompt_template: "A video of action {}".into(),
            seed: 0,
            loss: LossKind::Margin,
            smooth_target: SmoothTarget::Refined,
            recompute_pseudo_labels: false,
            reinit: Reinit::PerClass,
            use_descriptors: true,
            use_triplets: true,
        }
    }
}

pub const KEYS: &[&str] = &[
    "k_actions",
    "alpha",
    "gamma",
    "lambda_tmp",
    "steps_T",
    "learning_rate",
    "weight_decay",
    "s_clusters",
    "k_triplets",
    "percentile_p",
    "nms_tiou",
    "top1_confidence",
    "prompt_template",
    "seed",
    "loss",
    "smooth_target",
    "recompute_pseudo_labels",
    "reinit",
    "use_descriptors",
    "use_triplets",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

impl RunConfig {
    /// Sets one field by its textual key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "k_actions" => self.k_actions = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lambda_tmp" | "lambda" => self.lambda_tmp = parse(key, value)?,
            "steps_T" | "steps_t" => self.steps_t = parse(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "s_clusters" => self.s_clusters = parse(key, value)?,
            "k_triplets" => self.k_triplets = parse(key, value)?,
            "percentile_p" => self.percentile_p = parse(key, value)?,
            "nms_tiou" => self.nms_tiou = parse(key, value)?,
            "top1_confidence" => self.top1_confidence = parse(key, value)?,
            "prompt_template" => self.prompt_template = value.trim_matches('"').to_string(),
            "seed" => self.seed = parse(key, value)?,
            "loss" => self.loss = value.parse()?,
            "smooth_target" => self.smooth_target = value.parse()?,
            "recompute_pseudo_labels" => self.recompute_pseudo_labels = parse(key, value)?,
            "reinit" => self.reinit = value.parse()?,
            "use_descriptors" => self.use_descriptors = parse(key, value)?,
            "use_triplets" => self.use_triplets = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k, v)
    }

    /// Parses the flat text form: one `key = value` per line, `#` comments,
    /// blank lines ignored. Unset keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) if !raw[..i].contains('"') => &raw[..i],
                _ => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "k_actions = {}\nalpha = {}\ngamma = {}\nlambda_tmp = {}\nsteps_T = {}\n\
             learning_rate = {}\nweight_decay = {}\ns_clusters = {}\nk_triplets = {}\n\
             percentile_p = {}\nnms_tiou = {}\ntop1_confidence = {}\nprompt_template = \"{}\"\n\
             seed = {}\nloss = {}\nsmooth_target = {}\nrecompute_pseudo_labels = {}\n\
             reinit = {}\nuse_descriptors = {}\nuse_triplets = {}\n",
            self.k_actions,
            self.alpha,
            self.gamma,
            self.lambda_tmp,
            self.steps_t,
            self.learning_rate,
            self.weight_decay,
            self.s_clusters,
            self.k_triplets,
            self.percentile_p,
            self.nms_tiou,
            self.top1_confidence,
            self.prompt_template,
            self.seed,
            self.loss,
            self.smooth_target,
            self.recompute_pseudo_labels,
            self.reinit,
            self.use_descriptors,
            self.use_triplets,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.percentile_p > 0.0 && self.percentile_p < 50.0) {
            return bad("percentile_p must lie in (0, 50)");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if !(self.lambda_tmp >= 0.0 && self.lambda_tmp.is_finite()) {
            return bad("lambda_tmp must be non-negative");
        }
        if self.k_triplets > self.s_clusters {
            return bad("k_triplets must not exceed s_clusters");
        }
        if self.k_actions == 0 {
            return bad("k_actions must be at least 1");
        }
        if self.s_clusters == 0 {
            return bad("s_clusters must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.nms_tiou) {
            return bad("nms_tiou must lie in [0, 1]");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.k_actions, 2);
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.gamma, 5.0);
        assert_eq!(c.lambda_tmp, 1e-2);
        assert_eq!(c.steps_t, 10);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.s_clusters, 20);
        assert_eq!(c.k_triplets, 5);
        assert_eq!(c.prompt_template, "A video of action {}");
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.alpha = 0.0;
        c.loss = LossKind::Byol;
        c.reinit = Reinit::PerVideo;
        c.seed = 42;
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_overrides() {
        let mut c = RunConfig::from_text("# header\nalpha = 0.25  # inline\n\ns_clusters=5\n").unwrap();
        assert_eq!(c.alpha, 0.25);
        assert_eq!(c.s_clusters, 5);
        c.apply_override("steps_T=0").unwrap();
        assert_eq!(c.steps_t, 0);
        assert!(c.apply_override("nonsense=1").is_err());
        assert!(c.apply_override("alpha").is_err());
    }

    #[test]
    fn invariants_enforced() {
        assert!(RunConfig::from_text("percentile_p = 50").is_err());
        assert!(RunConfig::from_text("gamma = 0").is_err());
        assert!(RunConfig::from_text("k_triplets = 30").is_err());
        assert!(RunConfig::from_text("alpha = -1").is_err());
    }
}
