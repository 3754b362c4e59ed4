//! Transformer encoder layers combining CT-MSA and external attention.
//!
//! Each layer runs two sub-layers on `[B, T, C]`:
//!
//! ```text
//! u   = LN₁(dropout(CT-MSA(x))) + conv₁(x)
//! z   = ReLU(conv₂(u))
//! v   = LN₂(dropout(TEA(z)))
//! out = LN₃(conv₃(v)) + u
//! ```
//!
//! All three convolutions are pointwise (kernel 1), i.e. a per-step dense map.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, ExternalMemory, SelfAttention};
use crate::error::TensorError;
use crate::nn::{join, Context, Dense, Dropout, LayerNorm, Module};
use crate::tensor::{self, Tensor};

type Result<T> = std::result::Result<T, TensorError>;

/// Which attention mechanisms an encoder uses. The two substitutions are the
/// ablation arms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// CT-MSA in sub-layer 1, TEA in sub-layer 2.
    Full,
    /// Standard MSA replaces CT-MSA; TEA kept.
    MsaForCtMsa,
    /// Standard MSA replaces TEA; CT-MSA kept.
    MsaForTea,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::MsaForCtMsa, Variant::MsaForTea];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MsaForCtMsa => "msa_for_ct_msa",
            Variant::MsaForTea => "msa_for_tea",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub width: usize,
    pub heads: usize,
    /// CT-MSA window length per layer; the layer count is its length.
    pub windows: Vec<usize>,
    pub memory_slots: usize,
    pub dropout: f64,
    pub variant: Variant,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            width: 32,
            heads: 4,
            windows: vec![12, 24],
            memory_slots: 16,
            dropout: crate::nn::DEFAULT_DROPOUT,
            variant: Variant::Full,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self, len: usize) -> Result<()> {
        let bad = |m: String| Err(TensorError::Contract(m));
        if self.windows.is_empty() {
            return bad("encoder needs at least one layer".into());
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!(
                "encoder width {} is not divisible by head count {}",
                self.width, self.heads
            ));
        }
        if self.memory_slots == 0 {
            return bad("memory slot count must be >= 1".into());
        }
        for &w in &self.windows {
            if w == 0 || len % w != 0 {
                return bad(format!("lookback {len} is not divisible by window size {w}"));
            }
        }
        Ok(())
    }
}

/// Sub-layer 1 attention.
#[derive(Debug)]
pub enum TemporalAttention {
    CtMsa(SelfAttention),
    Msa(SelfAttention),
}

/// Sub-layer 2 attention.
#[derive(Debug)]
pub enum MemoryAttention {
    Tea(ExternalMemory),
    Msa(SelfAttention),
}

#[derive(Debug)]
pub struct EncoderLayer {
    pub attn1: TemporalAttention,
    pub ln1: LayerNorm,
    pub res_proj: Dense,
    pub pre_conv: Dense,
    pub attn2: MemoryAttention,
    pub ln2: LayerNorm,
    pub post_conv: Dense,
    pub ln3: LayerNorm,
    pub dropout: Dropout,
}

impl EncoderLayer {
    pub fn new(rng: &mut ChaCha8Rng, spec: &EncoderSpec, window: usize) -> Result<Self> {
        let c = spec.width;
        let attn1 = {
            let a = SelfAttention::new(rng, c, spec.heads, window, spec.dropout)?;
            match spec.variant {
                Variant::MsaForCtMsa => TemporalAttention::Msa(a),
                _ => TemporalAttention::CtMsa(a),
            }
        };
        let res_proj = Dense::new(rng, c, c);
        let pre_conv = Dense::new(rng, c, c);
        let attn2 = match spec.variant {
            Variant::MsaForTea => {
                MemoryAttention::Msa(SelfAttention::new(rng, c, spec.heads, window, spec.dropout)?)
            }
            _ => MemoryAttention::Tea(ExternalMemory::new(rng, spec.memory_slots, c)?),
        };
        let post_conv = Dense::new(rng, c, c);
        Ok(Self {
            attn1,
            ln1: LayerNorm::new(c),
            res_proj,
            pre_conv,
            attn2,
            ln2: LayerNorm::new(c),
            post_conv,
            ln3: LayerNorm::new(c),
            dropout: Dropout::new(spec.dropout)?,
        })
    }

    pub fn window(&self) -> usize {
        match &self.attn1 {
            TemporalAttention::CtMsa(a) | TemporalAttention::Msa(a) => a.window,
        }
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Context) -> Result<Tensor> {
        let a = match &self.attn1 {
            TemporalAttention::CtMsa(cfg) => attention::ct_msa(x, cfg, ctx)?,
            TemporalAttention::Msa(cfg) => attention::standard_msa(x, cfg, ctx)?,
        };
        let a = self.dropout.forward(&a, ctx)?;
        let u = tensor::add(&self.ln1.forward(&a)?, &self.res_proj.forward(x)?)?;

        let z = tensor::relu(&self.pre_conv.forward(&u)?);
        let m = match &self.attn2 {
            MemoryAttention::Tea(mem) => attention::tea(&z, mem)?,
            MemoryAttention::Msa(cfg) => attention::standard_msa(&z, cfg, ctx)?,
        };
        let v = self.ln2.forward(&self.dropout.forward(&m, ctx)?)?;
        let out = self.ln3.forward(&self.post_conv.forward(&v)?)?;
        tensor::add(&out, &u)
    }
}

impl Module for EncoderLayer {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        match &self.attn1 {
            TemporalAttention::CtMsa(a) => a.collect(&join(prefix, "sub1.ct_msa"), out),
            TemporalAttention::Msa(a) => a.collect(&join(prefix, "sub1.msa"), out),
        }
        self.ln1.collect(&join(prefix, "sub1.ln"), out);
        self.res_proj.collect(&join(prefix, "sub1.res_proj"), out);
        self.pre_conv.collect(&join(prefix, "sub2.pre_conv"), out);
        match &self.attn2 {
            MemoryAttention::Tea(m) => m.collect(&join(prefix, "sub2.tea"), out),
            MemoryAttention::Msa(a) => a.collect(&join(prefix, "sub2.msa"), out),
        }
        self.ln2.collect(&join(prefix, "sub2.ln_attn"), out);
        self.post_conv.collect(&join(prefix, "sub2.post_conv"), out);
        self.ln3.collect(&join(prefix, "sub2.ln_out"), out);
    }
}

#[derive(Debug)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new(rng: &mut ChaCha8Rng, spec: &EncoderSpec) -> Result<Self> {
        let layers = spec
            .windows
            .iter()
            .map(|&w| EncoderLayer::new(rng, spec, w))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut Context) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, ctx)?;
        }
        Ok(h)
    }
}

impl Module for Encoder {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&join(prefix, &format!("layers.{i}")), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(r: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn small_spec(windows: Vec<usize>) -> EncoderSpec {
        EncoderSpec {
            width: 8,
            heads: 2,
            windows,
            memory_slots: 4,
            dropout: 0.1,
            variant: Variant::Full,
        }
    }

    fn layer_norm_rows(x: &[f64], c: usize) -> Vec<f64> {
        x.chunks(c)
            .flat_map(|row| {
                let mu = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64;
                row.iter()
                    .map(move |v| (v - mu) / (var + crate::nn::LAYER_NORM_EPS).sqrt())
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn zero_branches_compose_as_described() {
        let mut r = rng(1);
        let spec = small_spec(vec![4]);
        let layer = EncoderLayer::new(&mut r, &spec, 4).unwrap();
        let c = 8;
        let zero = |t: &Tensor| t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        if let TemporalAttention::CtMsa(a) = &layer.attn1 {
            for (_, t) in a.named_tensors("") {
                zero(&t);
            }
        }
        zero(&layer.pre_conv.weight);
        zero(&layer.pre_conv.bias);
        {
            let mut w = layer.res_proj.weight.data_mut();
            w.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..c {
                w[i * c + i] = 1.0;
            }
        }
        zero(&layer.res_proj.bias);

        let x = random(&mut r, vec![2, 8, c]);
        let y = layer.forward(&x, &mut Context::eval()).unwrap().to_vec();

        // attention output 0 → LN₁(0) = 0, so u = x; z = 0 → TEA averages M_v
        let MemoryAttention::Tea(mem) = &layer.attn2 else { unreachable!() };
        let mv = mem.m_v.to_vec();
        let avg: Vec<f64> = (0..c).map(|k| (0..4).map(|l| mv[l * c + k]).sum::<f64>() / 4.0).collect();
        let v = layer_norm_rows(&avg, c);
        let (w3, b3) = (layer.post_conv.weight.to_vec(), layer.post_conv.bias.to_vec());
        let conv: Vec<f64> = (0..c).map(|o| b3[o] + (0..c).map(|i| v[i] * w3[i * c + o]).sum::<f64>()).collect();
        let top = layer_norm_rows(&conv, c);
        for (row, xrow) in y.chunks(c).zip(x.to_vec().chunks(c)) {
            for k in 0..c {
                assert!((row[k] - (top[k] + xrow[k])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shapes_preserved() {
        let mut r = rng(2);
        let spec = EncoderSpec {
            windows: vec![12],
            ..EncoderSpec::default()
        };
        let layer = EncoderLayer::new(&mut r, &spec, 12).unwrap();
        let y = layer
            .forward(&random(&mut r, vec![2, 24, 32]), &mut Context::eval())
            .unwrap();
        assert_eq!(y.shape(), &[2, 24, 32]);

        let enc = Encoder::new(&mut r, &EncoderSpec::default()).unwrap();
        let y = enc.forward(&random(&mut r, vec![1, 72, 32]), &mut Context::eval()).unwrap();
        assert_eq!(y.shape(), &[1, 72, 32]);
    }

    #[test]
    fn single_layer_stack_equals_layer() {
        let spec = small_spec(vec![4]);
        let enc = Encoder::new(&mut rng(3), &spec).unwrap();
        let layer = EncoderLayer::new(&mut rng(3), &spec, 4).unwrap();
        let x = random(&mut rng(4), vec![2, 8, 8]);
        let a = enc.forward(&x, &mut Context::eval()).unwrap().to_vec();
        let b = layer.forward(&x, &mut Context::eval()).unwrap().to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn window_divisibility_enforced() {
        let spec = small_spec(vec![3]);
        let layer = EncoderLayer::new(&mut rng(5), &spec, 3).unwrap();
        assert!(layer.forward(&Tensor::zeros(vec![1, 8, 8]), &mut Context::eval()).is_err());
        assert!(spec.validate(8).is_err());
        assert!(spec.validate(9).is_ok());
    }

    #[test]
    fn every_parameter_receives_gradient() {
        for variant in Variant::ALL {
            let spec = EncoderSpec {
                variant,
                ..small_spec(vec![4, 8])
            };
            let mut r = rng(6);
            let enc = Encoder::new(&mut r, &spec).unwrap();
            // larger memory keys so TEA weights are not flat
            for (name, t) in enc.named_tensors("") {
                if name.ends_with("m_k") {
                    t.data_mut().iter_mut().for_each(|v| *v *= 25.0);
                }
            }
            let x = random(&mut r, vec![2, 8, 8]);
            let wt = random(&mut r, vec![2, 8, 8]);
            let y = enc.forward(&x, &mut Context::eval()).unwrap();
            tensor::sum(&tensor::mul(&y, &wt).unwrap()).backward().unwrap();
            for (name, t) in enc.named_tensors("") {
                let g = t.grad().unwrap_or_else(|| panic!("{name} has no grad"));
                assert!(g.iter().any(|v| *v != 0.0), "{variant:?}: {name} gradient is zero");
            }
        }
    }

    #[test]
    fn each_layer_influences_the_output() {
        let spec = small_spec(vec![4, 8]);
        let mut r = rng(7);
        let enc = Encoder::new(&mut r, &spec).unwrap();
        let x = random(&mut r, vec![1, 8, 8]);
        let base = enc.forward(&x, &mut Context::eval()).unwrap().to_vec();
        for layer in &enc.layers {
            let w = &layer.post_conv.weight;
            let saved = w.to_vec();
            w.data_mut().iter_mut().for_each(|v| *v += 0.05);
            let y = enc.forward(&x, &mut Context::eval()).unwrap().to_vec();
            assert_ne!(y, base);
            w.data_mut().copy_from_slice(&saved);
        }
    }

    #[test]
    fn eval_forward_is_deterministic_and_finite() {
        let mut r = rng(8);
        let enc = Encoder::new(&mut r, &EncoderSpec::default()).unwrap();
        let x = Tensor::new(
            vec![1, 24, 32],
            (0..24 * 32).map(|_| r.gen_range(-1e3..1e3)).collect(),
        )
        .unwrap();
        let spec = EncoderSpec {
            windows: vec![12, 24],
            ..EncoderSpec::default()
        };
        let enc2 = Encoder::new(&mut r, &spec).unwrap();
        for e in [&enc, &enc2] {
            let a = e.forward(&x, &mut Context::eval()).unwrap().to_vec();
            let b = e.forward(&x, &mut Context::eval()).unwrap().to_vec();
            assert_eq!(a, b);
            assert!(a.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
        assert_eq!(Variant::parse("nope"), None);
    }
}
