use serde::{Deserialize, Serialize};

use super::losses::{byol_loss, margin_loss, select_pos_neg, smoothness_loss};
use super::scoring::{HeadGrads, ScoreForward, ScoreProblem};
use crate::bundle::VideoBundle;
use crate::config::{LossKind, RunConfig, SmoothTarget};
use crate::error::{Error, Result};
use crate::guidance::GuidanceSplit;
use crate::head::HeadSpec;
use crate::optim::{adamw_step, AdamWConfig, OptState};
use crate::tensor::Tensor;

/// The two trainable projection heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub vision: HeadSpec,
    pub text: HeadSpec,
}

impl Heads {
    pub fn from_bundle(b: &VideoBundle) -> Self {
        Self {
            vision: b.head_v.clone(),
            text: b.head_t.clone(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.vision.params();
        p.extend(self.text.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.vision.params_mut();
        p.extend(self.text.params_mut());
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = self.vision.param_names("head_v");
        n.extend(self.text.param_names("head_t"));
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params()
            .into_iter()
            .flat_map(|t| t.values().iter().copied())
            .collect()
    }

    /// Overwrites all parameters from a flat vector in [`Heads::params`] order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.params().iter().map(|t| t.len()).sum();
        if total != flat.len() {
            return Err(Error::DimensionMismatch {
                context: "flat parameter vector".into(),
                expected: total,
                found: flat.len(),
            });
        }
        let mut off = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.values_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Loss settings shared by the adaptation loop and the gradient checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub loss: LossKind,
    pub gamma: f64,
    pub lambda_tmp: f64,
    pub smooth_target: SmoothTarget,
}

impl Objective {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            loss: cfg.loss,
            gamma: cfg.gamma,
            lambda_tmp: cfg.lambda_tmp,
            smooth_target: cfg.smooth_target,
        }
    }
}

/// Loss terms at one point, with gradients w.r.t. base and refined scores.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub main: f64,
    pub smooth: f64,
    pub total: f64,
    pub d_base: Vec<f64>,
    pub d_refined: Vec<f64>,
}

pub fn evaluate_loss(obj: &Objective, fwd: &ScoreForward, pos: &[usize], neg: &[usize]) -> LossEval {
    let (main, mut d_refined) = match obj.loss {
        LossKind::Margin => margin_loss(&fwd.refined, pos, neg, obj.gamma),
        LossKind::Byol => byol_loss(&fwd.refined, pos, neg),
    };
    let target = match obj.smooth_target {
        SmoothTarget::Refined => &fwd.refined,
        SmoothTarget::Base => &fwd.base,
    };
    let (smooth, g_smooth) = smoothness_loss(target);
    let mut d_base = vec![0.0; fwd.base.len()];
    let sink = match obj.smooth_target {
        SmoothTarget::Refined => &mut d_refined,
        SmoothTarget::Base => &mut d_base,
    };
    for (d, g) in sink.iter_mut().zip(g_smooth) {
        *d += obj.lambda_tmp * g;
    }
    LossEval {
        main,
        smooth,
        total: main + obj.lambda_tmp * smooth,
        d_base,
        d_refined,
    }
}

/// Total loss and its gradient w.r.t. every head parameter, for fixed
/// pseudo-label sets.
pub fn objective_value_and_grad(
    problem: &ScoreProblem,
    heads: &Heads,
    obj: &Objective,
    pos: &[usize],
    neg: &[usize],
) -> Result<(f64, HeadGrads)> {
    let fwd = problem.forward(heads)?;
    let eval = evaluate_loss(obj, &fwd, pos, neg);
    let grads = problem.backward(heads, &fwd, &eval.d_base, &eval.d_refined)?;
    Ok((eval.total, grads))
}

/// Per-(video, class) record of the adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrace {
    pub class_id: String,
    /// Base scores under the initial heads.
    pub base_scores: Vec<f64>,
    /// Refined scores under the initial heads.
    pub refined_scores: Vec<f64>,
    pub margin_losses: Vec<f64>,
    pub smooth_losses: Vec<f64>,
    pub total_losses: Vec<f64>,
    /// Base scores recomputed under the adapted heads; used for proposals.
    pub final_scores: Vec<f64>,
    pub final_refined_scores: Vec<f64>,
    pub positive_set: Vec<usize>,
    pub negative_set: Vec<usize>,
}

/// Runs `cfg.steps_t` AdamW steps on `initial` and returns the adapted heads.
///
/// The pseudo-label sets come from the initial refined scores and stay fixed
/// unless `recompute_pseudo_labels` is set. With zero steps the final scores
/// equal the base scores bit for bit.
pub fn adapt_problem(
    problem: &ScoreProblem,
    initial: &Heads,
    cfg: &RunConfig,
    class_id: &str,
) -> Result<(Heads, ScoreTrace)> {
    let obj = Objective::from_config(cfg);
    let opt = AdamWConfig::new(cfg.learning_rate, cfg.weight_decay);
    let mut heads = initial.clone();
    let names = heads.param_names();
    let mut state = OptState::for_params(&heads.params());

    let fwd0 = problem.forward(&heads)?;
    let (mut pos, mut neg) = select_pos_neg(&fwd0.refined, cfg.percentile_p);
    let base_scores = fwd0.base.clone();
    let refined_scores = fwd0.refined.clone();
    let (mut margin_losses, mut smooth_losses, mut total_losses) = (vec![], vec![], vec![]);

    let mut fwd = fwd0;
    for step in 0..cfg.steps_t {
        if step > 0 {
            fwd = problem.forward(&heads)?;
            if cfg.recompute_pseudo_labels {
                (pos, neg) = select_pos_neg(&fwd.refined, cfg.percentile_p);
            }
        }
        let eval = evaluate_loss(&obj, &fwd, &pos, &neg);
        if !eval.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        margin_losses.push(eval.main);
        smooth_losses.push(eval.smooth);
        total_losses.push(eval.total);
        let g = problem.backward(&heads, &fwd, &eval.d_base, &eval.d_refined)?;
        let grads: Vec<Tensor> = g.vision.into_iter().chain(g.text).collect();
        adamw_step(&mut heads.params_mut(), &grads, &names, &mut state, &opt)?;
    }

    let last = problem.forward(&heads)?;
    Ok((
        heads,
        ScoreTrace {
            class_id: class_id.to_string(),
            base_scores,
            refined_scores,
            margin_losses,
            smooth_losses,
            total_losses,
            final_scores: last.base,
            final_refined_scores: last.refined,
            positive_set: pos,
            negative_set: neg,
        },
    ))
}

/// Adapts fresh copies of the bundle's heads for one class.
pub fn adapt(
    b: &VideoBundle,
    class_id: &str,
    split: &GuidanceSplit,
    cfg: &RunConfig,
) -> Result<(Heads, ScoreTrace)> {
    let alpha = if cfg.use_triplets { cfg.alpha } else { 0.0 };
    let split = if cfg.use_triplets { split.clone() } else { GuidanceSplit::empty() };
    let problem = ScoreProblem::from_bundle(b, class_id, &split, alpha, cfg.use_descriptors)?;
    adapt_problem(&problem, &Heads::from_bundle(b), cfg, class_id)
}
