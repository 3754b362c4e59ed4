//! Layer building blocks: dilated causal convolution, dense, batch norm,
//! layer norm, dropout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::TensorError;
use crate::tensor::{self, Tensor};

type Result<T> = std::result::Result<T, TensorError>;

pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Mutable state threaded through a forward pass: train/eval switch and the
/// dropout random stream.
pub struct Context {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
}

impl Context {
    pub fn new(mode: Mode, rng: ChaCha8Rng) -> Self {
        Self { mode, rng }
    }

    /// Eval-mode context; the rng is never touched in eval mode.
    pub fn eval() -> Self {
        use rand::SeedableRng;
        Self::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0))
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }
}

/// Named tensors (trainable parameters and buffers) reachable from a layer.
pub trait Module {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>);

    fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.collect(prefix, &mut out);
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Weights drawn from `U(-√(1/fan_in), √(1/fan_in))`.
pub fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::param(shape, data).expect("positive extents")
}

pub fn normal_param(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std is positive");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::param(shape, data).expect("positive extents")
}

pub fn constant_param(shape: Vec<usize>, value: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, vec![value; n]).expect("positive extents")
}

fn buffer(shape: Vec<usize>, value: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, vec![value; n]).expect("positive extents")
}

/// Dilated causal 1-D convolution over `[B, C, T]`.
#[derive(Debug)]
pub struct CausalConv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub dilation: usize,
}

impl CausalConv1d {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        if kernel == 0 || dilation == 0 || in_channels == 0 || out_channels == 0 {
            return Err(TensorError::Contract(format!(
                "conv needs positive kernel/dilation/channels, got k={kernel} d={dilation} \
                 in={in_channels} out={out_channels}"
            )));
        }
        let fan_in = in_channels * kernel;
        Ok(Self {
            weight: uniform_fan_in(rng, vec![out_channels, in_channels, kernel], fan_in),
            bias: uniform_fan_in(rng, vec![out_channels], fan_in),
            dilation,
        })
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        tensor::conv1d_causal(x, &self.weight, &self.bias, self.dilation)
    }
}

impl Module for CausalConv1d {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Affine map `x·W + b` over the last axis. Also serves as the pointwise
/// (kernel-1) convolution on `[B, T, C]` activations.
#[derive(Debug)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: uniform_fan_in(rng, vec![inputs, outputs], inputs),
            bias: uniform_fan_in(rng, vec![outputs], inputs),
        }
    }

    pub fn from_tensors(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(TensorError::Shape {
                op: "dense".into(),
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() == 1 {
            let lifted = tensor::reshape(x, vec![1, x.shape()[0]])?;
            let y = self.forward(&lifted)?;
            return tensor::reshape(&y, vec![self.weight.shape()[1]]);
        }
        let last = *x.shape().last().unwrap();
        if last != self.weight.shape()[0] {
            return Err(TensorError::Shape {
                op: "dense".into(),
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        tensor::add(&tensor::matmul(x, &self.weight)?, &self.bias)
    }
}

impl Module for Dense {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Batch normalization over `[B, C, T]` per channel.
#[derive(Debug)]
pub struct BatchNorm1d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: constant_param(vec![channels], 1.0),
            beta: constant_param(vec![channels], 0.0),
            running_mean: buffer(vec![channels], 0.0),
            running_var: buffer(vec![channels], 1.0),
            momentum: BATCH_NORM_MOMENTUM,
            eps: BATCH_NORM_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor, ctx: &Context) -> Result<Tensor> {
        if x.shape().len() != 3 {
            return Err(TensorError::Contract(format!(
                "batch_norm1d expects [B, C, T], got {:?}",
                x.shape()
            )));
        }
        if !ctx.is_train() {
            let mean = self.running_mean.to_vec();
            let var = self.running_var.to_vec();
            return tensor::batch_norm(x, &self.gamma, &self.beta, &mean, &var, self.eps, false);
        }
        let n = x.shape()[0] * x.shape()[2];
        if n < 2 {
            return Err(TensorError::Contract(format!(
                "train-mode batch norm needs B·T >= 2, got {n}"
            )));
        }
        let (mean, var) = tensor::channel_stats(x);
        {
            let m = self.momentum;
            let unbias = n as f64 / (n as f64 - 1.0);
            let mut rm = self.running_mean.data_mut();
            let mut rv = self.running_var.data_mut();
            for c in 0..mean.len() {
                rm[c] = (1.0 - m) * rm[c] + m * mean[c];
                rv[c] = (1.0 - m) * rv[c] + m * var[c] * unbias;
            }
        }
        tensor::batch_norm(x, &self.gamma, &self.beta, &mean, &var, self.eps, true)
    }
}

impl Module for BatchNorm1d {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
        out.push((join(prefix, "running_mean"), self.running_mean.clone()));
        out.push((join(prefix, "running_var"), self.running_var.clone()));
    }
}

#[derive(Debug)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: constant_param(vec![width], 1.0),
            beta: constant_param(vec![width], 0.0),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        tensor::layer_norm(x, &self.gamma, &self.beta, self.eps)
    }
}

impl Module for LayerNorm {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` in train mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Contract(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Self { rate })
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Context) -> Result<Tensor> {
        if !ctx.is_train() || self.rate == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask = (0..x.numel())
            .map(|_| if ctx.rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        tensor::mul_const(x, mask)
    }
}
