//! Attention mechanisms used by the encoder.
//!
//! * [`ct_msa`]: multi-head self-attention restricted to non-overlapping time
//!   windows of length `W`, with a causal (lower-triangular) mask inside each
//!   window. Scores are only ever computed inside a window, so the score
//!   product costs `T·W·C` multiply-accumulates instead of `T²·C`.
//! * [`standard_msa`]: ordinary multi-head self-attention over the full
//!   sequence, no mask. Used by the ablation variants.
//! * [`tea`]: external attention. Keys and values are two trainable memory
//!   matrices `M_k, M_v ∈ R^{L×C}` shared by every sample; each time step's
//!   weights over the `L` slots are softmax-normalized.

use std::cell::Cell;

use rand_chacha::ChaCha8Rng;

use crate::error::TensorError;
use crate::nn::{join, normal_param, uniform_fan_in, Context, Dropout, Module};
use crate::tensor::{self, Array, Mask, Tensor};

type Result<T> = std::result::Result<T, TensorError>;

thread_local! {
    static SCORE_MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulates spent on attention scores (`Q·Kᵀ`) on this thread
/// since the last [`reset_score_macs`].
pub fn score_macs() -> u64 {
    SCORE_MACS.with(|c| c.get())
}

pub fn reset_score_macs() {
    SCORE_MACS.with(|c| c.set(0));
}

fn count_score_macs(q: &Tensor, k_t: &Tensor) {
    let qs = q.shape();
    let ks = k_t.shape();
    let batches: usize = qs[..qs.len() - 2].iter().product();
    let macs = batches * qs[qs.len() - 2] * qs[qs.len() - 1] * ks[ks.len() - 1];
    SCORE_MACS.with(|c| c.set(c.get() + macs as u64));
}

/// Allowed iff `i` and `j` share a window of length `window` and `j ≤ i`.
pub fn causal_window_mask(len: usize, window: usize) -> Result<Mask> {
    if window == 0 || len == 0 || len % window != 0 {
        return Err(TensorError::Contract(format!(
            "sequence length {len} is not divisible by window size {window}"
        )));
    }
    Ok(Mask::from_fn(len, len, |i, j| i / window == j / window && j <= i))
}

/// Projection weights for multi-head self-attention.
///
/// `w_q`, `w_k`, `w_v` are `[C, C]`; column block `h` (width `C/N_h`) is head
/// `h`'s projection. `w_o` is the `[C, C]` output projection applied to the
/// concatenated heads.
#[derive(Debug)]
pub struct SelfAttention {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub heads: usize,
    /// Window length for [`ct_msa`]; ignored by [`standard_msa`].
    pub window: usize,
    pub dropout: Dropout,
}

impl SelfAttention {
    pub fn new(
        rng: &mut ChaCha8Rng,
        width: usize,
        heads: usize,
        window: usize,
        dropout: f64,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(TensorError::Contract(format!(
                "model width {width} is not divisible by head count {heads}"
            )));
        }
        if window == 0 {
            return Err(TensorError::Contract("window size must be >= 1".into()));
        }
        Ok(Self {
            w_q: uniform_fan_in(rng, vec![width, width], width),
            w_k: uniform_fan_in(rng, vec![width, width], width),
            w_v: uniform_fan_in(rng, vec![width, width], width),
            w_o: uniform_fan_in(rng, vec![width, width], width),
            heads,
            window,
            dropout: Dropout::new(dropout)?,
        })
    }

    pub fn width(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.width() / self.heads
    }

    /// Score scale `α = 1/√(C/N_h)`.
    pub fn alpha(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }
}

impl Module for SelfAttention {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "w_q"), self.w_q.clone()));
        out.push((join(prefix, "w_k"), self.w_k.clone()));
        out.push((join(prefix, "w_v"), self.w_v.clone()));
        out.push((join(prefix, "w_o"), self.w_o.clone()));
    }
}

/// Output of an attention op together with its normalized weights.
pub struct Attended {
    pub output: Tensor,
    /// Windowed self-attention: `[B, N_h, T/W, W, W]`. External attention:
    /// `[B, T, L]`.
    pub weights: Tensor,
}

fn check_input(x: &Tensor, width: usize) -> Result<(usize, usize)> {
    if x.shape().len() != 3 || x.shape()[2] != width {
        return Err(TensorError::Shape {
            op: "attention".into(),
            lhs: x.shape().to_vec(),
            rhs: vec![width],
        });
    }
    Ok((x.shape()[0], x.shape()[1]))
}

/// `[B, T, C] → [B, N_h, T/W, W, C/N_h]`
fn split_heads(x: &Tensor, heads: usize, window: usize) -> Result<Tensor> {
    let (b, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let r = tensor::reshape(x, vec![b, t / window, window, heads, c / heads])?;
    tensor::permute(&r, &[0, 3, 1, 2, 4])
}

/// Inverse of [`split_heads`].
fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let s = x.shape().to_vec();
    let (b, h, nw, w, dh) = (s[0], s[1], s[2], s[3], s[4]);
    let p = tensor::permute(x, &[0, 2, 3, 1, 4])?;
    tensor::reshape(&p, vec![b, nw * w, h * dh])
}

fn windowed_attention(
    x: &Tensor,
    cfg: &SelfAttention,
    window: usize,
    causal: bool,
    ctx: &mut Context,
) -> Result<Attended> {
    let (_, len) = check_input(x, cfg.width())?;
    if len % window != 0 {
        return Err(TensorError::Contract(format!(
            "sequence length {len} is not divisible by window size {window}"
        )));
    }
    let q = split_heads(&tensor::matmul(x, &cfg.w_q)?, cfg.heads, window)?;
    let k = split_heads(&tensor::matmul(x, &cfg.w_k)?, cfg.heads, window)?;
    let v = split_heads(&tensor::matmul(x, &cfg.w_v)?, cfg.heads, window)?;
    let k_t = tensor::transpose_last(&k)?;
    count_score_macs(&q, &k_t);
    let scores = tensor::scale(&tensor::matmul(&q, &k_t)?, cfg.alpha());
    let mask = causal.then(|| Mask::from_fn(window, window, |i, j| j <= i));
    let weights = tensor::masked_softmax(&scores, mask.as_ref())?;
    let dropped = cfg.dropout.forward(&weights, ctx)?;
    let heads = tensor::matmul(&dropped, &v)?;
    let output = tensor::matmul(&merge_heads(&heads)?, &cfg.w_o)?;
    Ok(Attended { output, weights })
}

/// Causal temporal multi-head self-attention over `[B, T, C]`.
pub fn ct_msa(x: &Tensor, cfg: &SelfAttention, ctx: &mut Context) -> Result<Tensor> {
    Ok(ct_msa_with_weights(x, cfg, ctx)?.output)
}

pub fn ct_msa_with_weights(
    x: &Tensor,
    cfg: &SelfAttention,
    ctx: &mut Context,
) -> Result<Attended> {
    windowed_attention(x, cfg, cfg.window, true, ctx)
}

/// Unmasked multi-head self-attention over the whole sequence.
pub fn standard_msa(x: &Tensor, cfg: &SelfAttention, ctx: &mut Context) -> Result<Tensor> {
    Ok(standard_msa_with_weights(x, cfg, ctx)?.output)
}

pub fn standard_msa_with_weights(
    x: &Tensor,
    cfg: &SelfAttention,
    ctx: &mut Context,
) -> Result<Attended> {
    let (_, len) = check_input(x, cfg.width())?;
    windowed_attention(x, cfg, len, false, ctx)
}

/// Expands windowed weights `[B, N_h, T/W, W, W]` into a full `[B, N_h, T, T]`
/// attention map (cross-window entries are zero).
pub fn full_attention_map(weights: &Tensor) -> Array {
    let s = weights.shape().to_vec();
    let (b, h, nw, w) = (s[0], s[1], s[2], s[3]);
    let len = nw * w;
    let src = weights.data();
    let mut out = vec![0.0; b * h * len * len];
    for bh in 0..b * h {
        for win in 0..nw {
            for i in 0..w {
                for j in 0..w {
                    let from = ((bh * nw + win) * w + i) * w + j;
                    let to = (bh * len + win * w + i) * len + win * w + j;
                    out[to] = src[from];
                }
            }
        }
    }
    Array::new(vec![b, h, len, len], out).expect("shape built from weights")
}

/// Trainable external memory for [`tea`].
#[derive(Debug)]
pub struct ExternalMemory {
    /// `[L, C]`
    pub m_k: Tensor,
    /// `[L, C]`
    pub m_v: Tensor,
}

impl ExternalMemory {
    pub fn new(rng: &mut ChaCha8Rng, slots: usize, width: usize) -> Result<Self> {
        if slots == 0 || width == 0 {
            return Err(TensorError::Contract(format!(
                "external memory needs positive slots and width, got L={slots} C={width}"
            )));
        }
        Ok(Self {
            m_k: normal_param(rng, vec![slots, width], 0.02),
            m_v: normal_param(rng, vec![slots, width], 0.02),
        })
    }

    pub fn from_tensors(m_k: Tensor, m_v: Tensor) -> Result<Self> {
        if m_k.shape().len() != 2 || m_k.shape() != m_v.shape() {
            return Err(TensorError::Shape {
                op: "external_memory".into(),
                lhs: m_k.shape().to_vec(),
                rhs: m_v.shape().to_vec(),
            });
        }
        Ok(Self { m_k, m_v })
    }

    pub fn slots(&self) -> usize {
        self.m_k.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.m_k.shape()[1]
    }
}

impl Module for ExternalMemory {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "m_k"), self.m_k.clone()));
        out.push((join(prefix, "m_v"), self.m_v.clone()));
    }
}

/// Temporal external attention: `softmax_L(x·M_kᵀ)·M_v`.
pub fn tea(x: &Tensor, mem: &ExternalMemory) -> Result<Tensor> {
    Ok(tea_with_weights(x, mem)?.output)
}

pub fn tea_with_weights(x: &Tensor, mem: &ExternalMemory) -> Result<Attended> {
    check_input(x, mem.width())?;
    let logits = tensor::matmul(x, &tensor::transpose_last(&mem.m_k)?)?;
    let weights = tensor::masked_softmax(&logits, None)?;
    let output = tensor::matmul(&weights, &mem.m_v)?;
    Ok(Attended { output, weights })
}
