//! Temporal convolutional network: stacked residual blocks of dilated causal
//! convolutions.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::nn::{join, BatchNorm1d, CausalConv1d, Context, Dropout, Module};
use crate::tensor::{self, Tensor};

type Result<T> = std::result::Result<T, TensorError>;

/// Hyperparameters of the TCN front end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcnSpec {
    pub in_channels: usize,
    pub kernel: usize,
    /// One dilation per residual block.
    pub dilations: Vec<usize>,
    /// Output width of each residual block.
    pub channels: Vec<usize>,
    pub dropout: f64,
}

impl Default for TcnSpec {
    fn default() -> Self {
        Self {
            in_channels: 1,
            kernel: 3,
            dilations: vec![1, 2, 4],
            channels: vec![32, 32, 32],
            dropout: crate::nn::DEFAULT_DROPOUT,
        }
    }
}

impl TcnSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TensorError::Contract(msg));
        if self.kernel == 0 {
            return bad("TCN kernel size must be >= 1".into());
        }
        if self.dilations.is_empty() || self.dilations.len() != self.channels.len() {
            return bad(format!(
                "TCN needs one channel width per dilation, got {} dilations and {} widths",
                self.dilations.len(),
                self.channels.len()
            ));
        }
        if self.in_channels == 0 || self.channels.contains(&0) {
            return bad("TCN channel widths must be positive".into());
        }
        let powers = self.dilations.iter().all(|d| d.is_power_of_two());
        let increasing = self.dilations.windows(2).all(|w| w[0] < w[1]);
        if !powers || !increasing {
            return bad(format!(
                "TCN dilations must be strictly increasing powers of two, got {:?}",
                self.dilations
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }
}

/// Number of input steps that can influence one output step:
/// `1 + Σ_blocks 2·(k−1)·d`.
pub fn receptive_field(spec: &TcnSpec) -> usize {
    1 + spec
        .dilations
        .iter()
        .map(|d| 2 * (spec.kernel - 1) * d)
        .sum::<usize>()
}

/// `ReLU(branch(x) + skip(x))`, where the branch is
/// conv → BN → ReLU → dropout, twice, at one dilation.
#[derive(Debug)]
pub struct ResidualBlock {
    pub conv1: CausalConv1d,
    pub bn1: BatchNorm1d,
    pub conv2: CausalConv1d,
    pub bn2: BatchNorm1d,
    pub dropout: Dropout,
    /// 1×1 convolution on the skip path; present iff the width changes.
    pub downsample: Option<CausalConv1d>,
}

impl ResidualBlock {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        dropout: f64,
    ) -> Result<Self> {
        let conv1 = CausalConv1d::new(rng, in_channels, out_channels, kernel, dilation)?;
        let conv2 = CausalConv1d::new(rng, out_channels, out_channels, kernel, dilation)?;
        let downsample = if in_channels != out_channels {
            Some(CausalConv1d::new(rng, in_channels, out_channels, 1, 1)?)
        } else {
            None
        };
        Ok(Self {
            conv1,
            bn1: BatchNorm1d::new(out_channels),
            conv2,
            bn2: BatchNorm1d::new(out_channels),
            dropout: Dropout::new(dropout)?,
            downsample,
        })
    }

    pub fn dilation(&self) -> usize {
        self.conv1.dilation
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Context) -> Result<Tensor> {
        let h = self.conv1.forward(x)?;
        let h = tensor::relu(&self.bn1.forward(&h, ctx)?);
        let h = self.dropout.forward(&h, ctx)?;
        let h = self.conv2.forward(&h)?;
        let h = tensor::relu(&self.bn2.forward(&h, ctx)?);
        let h = self.dropout.forward(&h, ctx)?;
        let skip = match &self.downsample {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok(tensor::relu(&tensor::add(&h, &skip)?))
    }
}

impl Module for ResidualBlock {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.conv1.collect(&join(prefix, "conv1"), out);
        self.bn1.collect(&join(prefix, "bn1"), out);
        self.conv2.collect(&join(prefix, "conv2"), out);
        self.bn2.collect(&join(prefix, "bn2"), out);
        if let Some(ds) = &self.downsample {
            ds.collect(&join(prefix, "downsample"), out);
        }
    }
}

#[derive(Debug)]
pub struct Tcn {
    pub blocks: Vec<ResidualBlock>,
}

impl Tcn {
    pub fn new(rng: &mut ChaCha8Rng, spec: &TcnSpec) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::with_capacity(spec.dilations.len());
        let mut width = spec.in_channels;
        for (&d, &c) in spec.dilations.iter().zip(&spec.channels) {
            blocks.push(ResidualBlock::new(rng, width, c, spec.kernel, d, spec.dropout)?);
            width = c;
        }
        Ok(Self { blocks })
    }

    /// `[B, Cin, T] → [B, C, T]`.
    pub fn forward(&self, x: &Tensor, ctx: &mut Context) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h, ctx)?;
        }
        Ok(h)
    }
}

impl Module for Tcn {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&join(prefix, &format!("blocks.{i}")), out);
        }
    }
}
