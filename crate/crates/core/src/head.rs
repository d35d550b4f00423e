//! Adaptable encoder heads: a small layer vocabulary with an exact
//! forward/backward pair.
//!
//! Inputs are `n x d_in` matrices; every layer acts row-wise. The forward pass
//! records a [`Tape`] holding each layer's input plus whatever the backward
//! pass needs (normalized activations and inverse deviations for layer norm).

use serde::{Deserialize, Serialize};

use crate::bundle::Violation;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    /// GELU, tanh approximation.
    GeluTanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::GeluTanh => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
        }
    }

    /// Local derivative. relu'(0) is 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::GeluTanh => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `y = W x + b` with `W` of shape `d_out x d_in`.
    Affine { weight: Tensor, bias: Tensor },
    Activation(Activation),
    LayerNorm {
        gamma: Tensor,
        beta: Tensor,
        epsilon: f64,
    },
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Affine { .. } => "affine",
            Layer::Activation(_) => "activation",
            Layer::LayerNorm { .. } => "layer_norm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadSpec {
    pub layers: Vec<Layer>,
}

impl HeadSpec {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Width expected by the first layer that fixes one.
    pub fn input_width(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Affine { weight, .. } if weight.rank() == 2 => Some(weight.dims()[1]),
            Layer::LayerNorm { gamma, .. } => Some(gamma.len()),
            _ => None,
        })
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Affine { weight, .. } if weight.rank() == 2 => Some(weight.dims()[0]),
            Layer::LayerNorm { gamma, .. } => Some(gamma.len()),
            _ => None,
        })
    }

    /// Structural checks: at least one affine layer, composable widths,
    /// finite parameters, positive epsilon.
    pub fn violations(&self, name: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        if !self.layers.iter().any(|l| matches!(l, Layer::Affine { .. })) {
            out.push(Violation::new(name, "needs at least one affine layer"));
        }
        let mut width: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let field = format!("{name}.layers[{i}]");
            match layer {
                Layer::Affine { weight, bias } => {
                    if weight.rank() != 2 {
                        out.push(Violation::new(&field, "weight must be 2-D"));
                        width = None;
                        continue;
                    }
                    let (d_out, d_in) = (weight.dims()[0], weight.dims()[1]);
                    if bias.rank() != 1 || bias.len() != d_out {
                        out.push(Violation::new(
                            &field,
                            format!("bias must be a vector of length {d_out}"),
                        ));
                    }
                    if let Some(w) = width {
                        if w != d_in {
                            out.push(Violation::new(
                                &field,
                                format!("input width {d_in} does not match preceding width {w}"),
                            ));
                        }
                    }
                    if !weight.is_finite() || !bias.is_finite() {
                        out.push(Violation::new(&field, "parameters must be finite"));
                    }
                    width = Some(d_out);
                }
                Layer::Activation(_) => {}
                Layer::LayerNorm {
                    gamma,
                    beta,
                    epsilon,
                } => {
                    let d = gamma.len();
                    if gamma.rank() != 1 || beta.rank() != 1 || beta.len() != d {
                        out.push(Violation::new(&field, "gamma and beta must be equal-length vectors"));
                    }
                    if let Some(w) = width {
                        if w != d {
                            out.push(Violation::new(
                                &field,
                                format!("width {d} does not match preceding width {w}"),
                            ));
                        }
                    }
                    if !(*epsilon > 0.0 && epsilon.is_finite()) {
                        out.push(Violation::new(&field, "epsilon must be positive"));
                    }
                    if !gamma.is_finite() || !beta.is_finite() {
                        out.push(Violation::new(&field, "parameters must be finite"));
                    }
                    width = Some(d);
                }
            }
        }
        out
    }

    /// Trainable tensors in a fixed order (weight, bias / gamma, beta per layer).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Affine { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::LayerNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                Layer::Activation(_) => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Affine { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::LayerNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                Layer::Activation(_) => {}
            }
        }
        out
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Affine { .. } => {
                    out.push(format!("{prefix}.layers[{i}].weight"));
                    out.push(format!("{prefix}.layers[{i}].bias"));
                }
                Layer::LayerNorm { .. } => {
                    out.push(format!("{prefix}.layers[{i}].gamma"));
                    out.push(format!("{prefix}.layers[{i}].beta"));
                }
                Layer::Activation(_) => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Affine,
    Activation,
    /// Normalized rows and per-row `1 / sqrt(var + eps)`.
    LayerNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
}

/// Intermediates recorded by [`head_forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    rows: usize,
    /// Input of each layer, plus the final output as the last entry.
    activations: Vec<Tensor>,
    caches: Vec<LayerCache>,
    kinds: Vec<&'static str>,
}

impl Tape {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("tape holds at least the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    /// Input of layer `i`.
    pub fn layer_input(&self, i: usize) -> &Tensor {
        &self.activations[i]
    }
}

/// Gradients for one head, in the order of [`HeadSpec::params`].
pub type ParamGrads = Vec<Tensor>;

pub fn head_forward(head: &HeadSpec, x: &Tensor) -> Result<(Tensor, Tape)> {
    if x.rank() != 2 {
        return Err(Error::Shape(format!("head input must be 2-D, got {:?}", x.dims())));
    }
    let n = x.rows();
    let mut current = x.clone();
    let mut activations = Vec::with_capacity(head.layers.len() + 1);
    let mut caches = Vec::with_capacity(head.layers.len());
    for (li, layer) in head.layers.iter().enumerate() {
        let d_in = current.cols();
        let (next, cache) = match layer {
            Layer::Affine { weight, bias } => {
                let (d_out, w_in) = (weight.dims()[0], weight.dims()[1]);
                if w_in != d_in {
                    return Err(Error::DimensionMismatch {
                        context: format!("head layer {li} input width"),
                        expected: w_in,
                        found: d_in,
                    });
                }
                let w = weight.values();
                let b = bias.values();
                let mut out = vec![0.0; n * d_out];
                for r in 0..n {
                    let xr = current.row(r);
                    let yr = &mut out[r * d_out..(r + 1) * d_out];
                    for (o, y) in yr.iter_mut().enumerate() {
                        let wr = &w[o * d_in..(o + 1) * d_in];
                        *y = b[o] + dot(wr, xr);
                    }
                }
                (Tensor::matrix(n, d_out, out)?, LayerCache::Affine)
            }
            Layer::Activation(kind) => {
                let out = current.values().iter().map(|&v| kind.apply(v)).collect();
                (Tensor::matrix(n, d_in, out)?, LayerCache::Activation)
            }
            Layer::LayerNorm {
                gamma,
                beta,
                epsilon,
            } => {
                if gamma.len() != d_in {
                    return Err(Error::DimensionMismatch {
                        context: format!("head layer {li} layer-norm width"),
                        expected: gamma.len(),
                        found: d_in,
                    });
                }
                let mut out = vec![0.0; n * d_in];
                let mut xhat = vec![0.0; n * d_in];
                let mut inv_std = vec![0.0; n];
                for r in 0..n {
                    let xr = current.row(r);
                    let mean = xr.iter().sum::<f64>() / d_in as f64;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d_in as f64;
                    let is = 1.0 / (var + epsilon).sqrt();
                    inv_std[r] = is;
                    for j in 0..d_in {
                        let h = (xr[j] - mean) * is;
                        xhat[r * d_in + j] = h;
                        out[r * d_in + j] = gamma.values()[j] * h + beta.values()[j];
                    }
                }
                (Tensor::matrix(n, d_in, out)?, LayerCache::LayerNorm { xhat, inv_std })
            }
        };
        activations.push(std::mem::replace(&mut current, next));
        caches.push(cache);
    }
    activations.push(current.clone());
    let kinds = head.layers.iter().map(Layer::kind).collect();
    Ok((
        current,
        Tape {
            rows: n,
            activations,
            caches,
            kinds,
        },
    ))
}

/// Reverse pass for `sum(Y * dY)`. Returns parameter gradients (ordered as
/// [`HeadSpec::params`]) and the gradient with respect to the head input.
pub fn head_backward(head: &HeadSpec, tape: &Tape, dy: &Tensor) -> Result<(ParamGrads, Tensor)> {
    if tape.caches.len() != head.layers.len()
        || head.layers.iter().map(Layer::kind).ne(tape.kinds.iter().copied())
    {
        return Err(Error::Shape("tape was recorded for a different head".into()));
    }
    let out = tape.output();
    if dy.dims() != out.dims() {
        return Err(Error::Shape(format!(
            "upstream gradient has dims {:?}, head output has {:?}",
            dy.dims(),
            out.dims()
        )));
    }
    let n = tape.rows;
    let mut grad = dy.clone();
    let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(head.layers.len());
    for (li, layer) in head.layers.iter().enumerate().rev() {
        let input = &tape.activations[li];
        let d_in = input.cols();
        match (layer, &tape.caches[li]) {
            (Layer::Affine { weight, .. }, LayerCache::Affine) => {
                let d_out = weight.dims()[0];
                let w = weight.values();
                let mut gw = vec![0.0; d_out * d_in];
                let mut gb = vec![0.0; d_out];
                let mut gx = vec![0.0; n * d_in];
                for r in 0..n {
                    let xr = input.row(r);
                    let gr = grad.row(r);
                    let gxr = &mut gx[r * d_in..(r + 1) * d_in];
                    for o in 0..d_out {
                        let g = gr[o];
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        let gwr = &mut gw[o * d_in..(o + 1) * d_in];
                        let wr = &w[o * d_in..(o + 1) * d_in];
                        for j in 0..d_in {
                            gwr[j] += g * xr[j];
                            gxr[j] += g * wr[j];
                        }
                    }
                }
                per_layer.push(vec![
                    Tensor::matrix(d_out, d_in, gw)?,
                    Tensor::vector(gb)?,
                ]);
                grad = Tensor::matrix(n, d_in, gx)?;
            }
            (Layer::Activation(kind), LayerCache::Activation) => {
                let gx = grad
                    .values()
                    .iter()
                    .zip(input.values())
                    .map(|(g, &x)| g * kind.derivative(x))
                    .collect();
                per_layer.push(Vec::new());
                grad = Tensor::matrix(n, d_in, gx)?;
            }
            (Layer::LayerNorm { gamma, .. }, LayerCache::LayerNorm { xhat, inv_std }) => {
                let g = gamma.values();
                let mut ggamma = vec![0.0; d_in];
                let mut gbeta = vec![0.0; d_in];
                let mut gx = vec![0.0; n * d_in];
                let inv_d = 1.0 / d_in as f64;
                for r in 0..n {
                    let gr = grad.row(r);
                    let hr = &xhat[r * d_in..(r + 1) * d_in];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d_in {
                        ggamma[j] += gr[j] * hr[j];
                        gbeta[j] += gr[j];
                        let dh = gr[j] * g[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh *= inv_d;
                    mean_dh_h *= inv_d;
                    for j in 0..d_in {
                        let dh = gr[j] * g[j];
                        gx[r * d_in + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                per_layer.push(vec![Tensor::vector(ggamma)?, Tensor::vector(gbeta)?]);
                grad = Tensor::matrix(n, d_in, gx)?;
            }
            _ => return Err(Error::Shape("tape was recorded for a different head".into())),
        }
    }
    per_layer.reverse();
    Ok((per_layer.into_iter().flatten().collect(), grad))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
