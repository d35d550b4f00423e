//! Finite-difference verification of every analytic gradient.
//!
//! Each check draws random instances, compares the analytic gradient with
//! central differences (`h = 1e-6`) and reports the relative error
//! `|a - n| / max(|a|, |n|)` over the whole flattened gradient. Instances
//! that sit within `1e-4` of a non-differentiable point (ReLU kink, tied
//! min/max in the margin loss, tied neighbours in the smoothness loss, a
//! head output too close to zero to normalize) are discarded and redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{LossKind, SmoothTarget};
use crate::error::{Error, Result};
use crate::head::{head_backward, head_forward, Activation, HeadSpec, Layer};
use crate::linalg::norm;
use crate::localizer::{
    byol_loss, evaluate_loss, margin_loss, objective_value_and_grad, select_pos_neg, smoothness_loss, Heads,
    Objective, ScoreProblem,
};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-6;
pub const TIE_GAP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-6;
const MAX_DRAWS_PER_INSTANCE: usize = 50;

pub const CHECKS: &[&str] = &["head_backward", "margin_loss", "smoothness_loss", "byol_loss", "objective"];

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    /// Draws rejected as tie-adjacent.
    pub excluded: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub instances: usize,
    pub tolerance: f64,
    /// Scales the analytic gradient of the named check by `1 + 1e-3`, to
    /// demonstrate that the harness notices a wrong gradient.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 50,
            tolerance: TOLERANCE,
            corrupt: None,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| normal(rng) * scale).collect()).expect("dims are positive")
}

/// Random head `d_in -> d_out` of one to three affine layers, with random
/// activations and layer norms between them.
pub fn random_head(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> HeadSpec {
    let n_affine = rng.random_range(1..=3);
    let mut layers = Vec::new();
    let mut width = d_in;
    for i in 0..n_affine {
        let out = if i + 1 == n_affine { d_out } else { rng.random_range(3..=7) };
        layers.push(Layer::Affine {
            weight: random_tensor(rng, &[out, width], 1.0 / (width as f64).sqrt()),
            bias: random_tensor(rng, &[out], 0.3),
        });
        width = out;
        if i + 1 < n_affine || rng.random_bool(0.3) {
            if rng.random_bool(0.4) {
                layers.push(Layer::LayerNorm {
                    gamma: Tensor::vector((0..width).map(|_| 1.0 + 0.2 * normal(rng)).collect()).unwrap(),
                    beta: random_tensor(rng, &[width], 0.2),
                    epsilon: 1e-5,
                });
            }
            let act = match rng.random_range(0..4) {
                0 => Activation::Relu,
                1 => Activation::Tanh,
                2 => Activation::GeluTanh,
                _ => Activation::Identity,
            };
            layers.push(Layer::Activation(act));
        }
    }
    HeadSpec::new(layers)
}

/// True when some output row of `head` is within `TIE_GAP` of zero, where
/// row normalization is undefined.
fn near_zero_output(head: &HeadSpec, x: &Tensor) -> Result<bool> {
    let (y, _) = head_forward(head, x)?;
    Ok((0..y.rows()).any(|r| norm(y.row(r)) < TIE_GAP))
}

/// True when some ReLU input lies within `TIE_GAP` of its kink.
fn near_relu_kink(head: &HeadSpec, x: &Tensor) -> Result<bool> {
    let (_, tape) = head_forward(head, x)?;
    for (i, layer) in head.layers.iter().enumerate() {
        if let Layer::Activation(Activation::Relu) = layer {
            if tape.layer_input(i).values().iter().any(|v| v.abs() < TIE_GAP) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn head_flat(head: &HeadSpec) -> Vec<f64> {
    head.params().iter().flat_map(|t| t.values().iter().copied()).collect()
}

fn head_assign(head: &mut HeadSpec, flat: &[f64]) {
    let mut off = 0;
    for t in head.params_mut() {
        let n = t.len();
        t.values_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

/// One instance: `Some((analytic, numeric))`, or `None` when tie-adjacent.
type Instance = Option<(Vec<f64>, Vec<f64>)>;

fn head_instance(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (d_in, d_out, n) = (rng.random_range(2..=6), rng.random_range(2..=6), rng.random_range(1..=5));
    let head = random_head(rng, d_in, d_out);
    let x = random_tensor(rng, &[n, d_in], 1.0);
    if near_relu_kink(&head, &x)? {
        return Ok(None);
    }
    let dy = random_tensor(rng, &[n, d_out], 1.0);
    let (_, tape) = head_forward(&head, &x)?;
    let (grads, dx) = head_backward(&head, &tape, &dy)?;
    let mut analytic: Vec<f64> = grads.iter().flat_map(|t| t.values().iter().copied()).collect();
    analytic.extend_from_slice(dx.values());

    let theta = head_flat(&head);
    let n_theta = theta.len();
    let mut point = theta;
    point.extend_from_slice(x.values());
    let mut probe = head.clone();
    let numeric = central_difference(
        |v| {
            head_assign(&mut probe, &v[..n_theta]);
            let xi = Tensor::new(x.dims().to_vec(), v[n_theta..].to_vec())?;
            let (y, _) = head_forward(&probe, &xi)?;
            Ok(y.values().iter().zip(dy.values()).map(|(a, b)| a * b).sum())
        },
        &point,
        STEP,
    )?;
    Ok(Some((analytic, numeric)))
}

fn random_scores(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(6..=30);
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn extreme_is_isolated(s: &[f64], set: &[usize], want_min: bool) -> bool {
    let mut v: Vec<f64> = set.iter().map(|&i| s[i]).collect();
    v.sort_by(f64::total_cmp);
    if !want_min {
        v.reverse();
    }
    v.len() < 2 || (v[1] - v[0]).abs() >= TIE_GAP
}

fn margin_instance(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let s = random_scores(rng);
    let (pos, neg) = select_pos_neg(&s, rng.random_range(10.0..45.0));
    let gamma = rng.random_range(0.05..2.0);
    let (v, analytic) = margin_loss(&s, &pos, &neg, gamma);
    if !extreme_is_isolated(&s, &pos, true) || !extreme_is_isolated(&s, &neg, false) || v.abs() < TIE_GAP {
        return Ok(None);
    }
    let numeric = central_difference(|x| Ok(margin_loss(x, &pos, &neg, gamma).0), &s, STEP)?;
    Ok(Some((analytic, numeric)))
}

fn has_tied_neighbours(s: &[f64]) -> bool {
    s.windows(2).any(|w| (w[1] - w[0]).abs() < TIE_GAP)
}

fn smoothness_instance(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let s = random_scores(rng);
    if has_tied_neighbours(&s) {
        return Ok(None);
    }
    let (_, analytic) = smoothness_loss(&s);
    let numeric = central_difference(|x| Ok(smoothness_loss(x).0), &s, STEP)?;
    Ok(Some((analytic, numeric)))
}

fn byol_instance(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let s = random_scores(rng);
    let (pos, neg) = select_pos_neg(&s, rng.random_range(10.0..45.0));
    let (_, analytic) = byol_loss(&s, &pos, &neg);
    let numeric = central_difference(|x| Ok(byol_loss(x, &pos, &neg).0), &s, STEP)?;
    Ok(Some((analytic, numeric)))
}

/// Random scoring problem with freshly drawn heads.
pub fn random_problem(rng: &mut ChaCha8Rng) -> (ScoreProblem, Heads, Objective) {
    let (d_v, d_t, width) = (rng.random_range(3..=6), rng.random_range(3..=6), rng.random_range(3..=6));
    let n = rng.random_range(5..=40);
    let n_desc = rng.random_range(1..=4);
    let (n_aff, n_dis) = if rng.random_bool(0.8) {
        let k = rng.random_range(1..=3);
        (k, k)
    } else {
        (0, 0)
    };
    let problem = ScoreProblem {
        frames: random_tensor(rng, &[n, d_v], 1.0),
        texts: random_tensor(rng, &[n_desc + n_aff + n_dis, d_t], 1.0),
        n_descriptors: n_desc,
        n_affine: n_aff,
        n_distractor: n_dis,
        alpha: rng.random_range(0.1..1.0),
        scale: rng.random_range(1.0..8.0),
        bias: rng.random_range(-2.0..1.0),
    };
    let heads = Heads {
        vision: random_head(rng, d_v, width),
        text: random_head(rng, d_t, width),
    };
    let obj = Objective {
        loss: if rng.random_bool(0.75) { LossKind::Margin } else { LossKind::Byol },
        gamma: rng.random_range(0.5..5.0),
        lambda_tmp: rng.random_range(1e-3..1.0),
        smooth_target: if rng.random_bool(0.5) { SmoothTarget::Refined } else { SmoothTarget::Base },
    };
    (problem, heads, obj)
}

fn objective_instance(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (problem, heads, obj) = random_problem(rng);
    if near_relu_kink(&heads.vision, &problem.frames)?
        || near_relu_kink(&heads.text, &problem.texts)?
        || near_zero_output(&heads.vision, &problem.frames)?
        || near_zero_output(&heads.text, &problem.texts)?
    {
        return Ok(None);
    }
    let fwd = problem.forward(&heads)?;
    let (pos, neg) = select_pos_neg(&fwd.refined, rng.random_range(10.0..45.0));
    if obj.loss == LossKind::Margin
        && (!extreme_is_isolated(&fwd.refined, &pos, true)
            || !extreme_is_isolated(&fwd.refined, &neg, false)
            || evaluate_loss(&obj, &fwd, &pos, &neg).main.abs() < TIE_GAP)
    {
        return Ok(None);
    }
    let smoothed = match obj.smooth_target {
        SmoothTarget::Refined => &fwd.refined,
        SmoothTarget::Base => &fwd.base,
    };
    if has_tied_neighbours(smoothed) {
        return Ok(None);
    }
    let (_, grads) = objective_value_and_grad(&problem, &heads, &obj, &pos, &neg)?;
    let analytic = grads.flatten();
    let mut probe = heads.clone();
    let numeric = central_difference(
        |v| {
            probe.assign_flat(v)?;
            let f = problem.forward(&probe)?;
            Ok(evaluate_loss(&obj, &f, &pos, &neg).total)
        },
        &heads.flatten(),
        STEP,
    )?;
    Ok(Some((analytic, numeric)))
}

/// Runs one named check over `opts.instances` valid instances.
pub fn run_check(name: &str, opts: &GradcheckOptions) -> Result<CheckResult> {
    let draw: fn(&mut ChaCha8Rng) -> Result<Instance> = match name {
        "head_backward" => head_instance,
        "margin_loss" => margin_instance,
        "smoothness_loss" => smoothness_instance,
        "byol_loss" => byol_instance,
        "objective" => objective_instance,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown gradient check {other:?}; expected one of {}",
                CHECKS.join(", ")
            )))
        }
    };
    let salt = CHECKS.iter().position(|c| *c == name).unwrap_or(0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt);
    let corrupt = opts.corrupt.as_deref() == Some(name);
    let (mut errors, mut excluded) = (Vec::with_capacity(opts.instances), 0);
    while errors.len() < opts.instances {
        if excluded > MAX_DRAWS_PER_INSTANCE * opts.instances.max(1) {
            return Err(Error::InvalidArgument(format!(
                "{name}: too many tie-adjacent draws ({excluded})"
            )));
        }
        match draw(&mut rng)? {
            None => excluded += 1,
            Some((mut analytic, numeric)) => {
                if corrupt {
                    analytic.iter_mut().for_each(|a| *a *= 1.0 + 1e-3);
                }
                errors.push(relative_error(&analytic, &numeric));
            }
        }
    }
    let max = errors.iter().copied().fold(0.0, f64::max);
    let mean = if errors.is_empty() { 0.0 } else { errors.iter().sum::<f64>() / errors.len() as f64 };
    Ok(CheckResult {
        name: name.to_string(),
        instances: errors.len(),
        excluded,
        max_rel_error: max,
        mean_rel_error: mean,
        passed: max < opts.tolerance,
    })
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let checks = CHECKS.iter().map(|c| run_check(c, opts)).collect::<Result<Vec<_>>>()?;
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        checks,
    })
}
