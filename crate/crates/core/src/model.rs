//! Full forecaster: TCN → encoder stack → flatten → dense head.
//!
//! All `H` forecast steps come out of one forward pass; nothing is fed back.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderSpec, Variant};
use crate::error::{CheckpointError, TensorError};
use crate::nn::{join, Context, Dense, Module};
use crate::tcn::{Tcn, TcnSpec};
use crate::tensor::{self, Array, Tensor};

type Result<T> = std::result::Result<T, TensorError>;

/// Scaled inputs must lie inside this band (the `[0, 1]` training range plus
/// slack for test data beyond the training extrema).
pub const SCALED_INPUT_RANGE: (f64, f64) = (-0.5, 1.5);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcnformerSpec {
    /// Input length `T` in hours.
    pub lookback: usize,
    /// Forecast length `H` in hours.
    pub horizon: usize,
    pub tcn: TcnSpec,
    pub encoder: EncoderSpec,
    /// Hidden widths of the dense head; empty means a single dense layer.
    pub head_hidden: Vec<usize>,
}

impl Default for TcnformerSpec {
    fn default() -> Self {
        Self {
            lookback: 72,
            horizon: 12,
            tcn: TcnSpec::default(),
            encoder: EncoderSpec::default(),
            head_hidden: Vec::new(),
        }
    }
}

impl TcnformerSpec {
    /// A very small configuration for gradient checks and quick tests:
    /// `T=8, C=4, N_h=2`, one TCN block, one encoder layer with `W=4`, `H=2`.
    pub fn tiny() -> Self {
        Self {
            lookback: 8,
            horizon: 2,
            tcn: TcnSpec {
                in_channels: 1,
                kernel: 3,
                dilations: vec![1],
                channels: vec![4],
                dropout: 0.0,
            },
            encoder: EncoderSpec {
                width: 4,
                heads: 2,
                windows: vec![4],
                memory_slots: 3,
                dropout: 0.0,
                variant: Variant::Full,
            },
            head_hidden: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TensorError::Contract(m));
        if self.lookback == 0 || self.horizon == 0 {
            return bad("lookback and horizon must be >= 1".into());
        }
        self.tcn.validate()?;
        if self.tcn.in_channels != 1 {
            return bad("the forecaster takes a univariate series (in_channels = 1)".into());
        }
        if self.tcn.out_channels() != self.encoder.width {
            return bad(format!(
                "TCN output width {} must equal encoder width {}",
                self.tcn.out_channels(),
                self.encoder.width
            ));
        }
        if self.head_hidden.contains(&0) {
            return bad("head hidden widths must be positive".into());
        }
        self.encoder.validate(self.lookback)
    }

    /// Flat `key = value` view used by checkpoints and run configs.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lookback", self.lookback.to_string()),
            ("horizon", self.horizon.to_string()),
            ("tcn_kernel", self.tcn.kernel.to_string()),
            ("tcn_dilations", join_list(&self.tcn.dilations)),
            ("tcn_channels", join_list(&self.tcn.channels)),
            ("tcn_dropout", self.tcn.dropout.to_string()),
            ("heads", self.encoder.heads.to_string()),
            ("windows", join_list(&self.encoder.windows)),
            ("memory_slots", self.encoder.memory_slots.to_string()),
            ("encoder_dropout", self.encoder.dropout.to_string()),
            ("variant", self.encoder.variant.name().to_string()),
            ("head_hidden", join_list(&self.head_hidden)),
        ]
    }

    /// Applies one `key = value` pair. Returns `Ok(false)` for keys that do
    /// not belong to the model spec.
    pub fn set_kv(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        match key {
            "lookback" => self.lookback = parse_num(value)?,
            "horizon" => self.horizon = parse_num(value)?,
            "tcn_kernel" => self.tcn.kernel = parse_num(value)?,
            "tcn_dilations" => self.tcn.dilations = parse_list(value)?,
            "tcn_channels" => {
                self.tcn.channels = parse_list(value)?;
                if let Some(&c) = self.tcn.channels.last() {
                    self.encoder.width = c;
                }
            }
            "tcn_dropout" => self.tcn.dropout = parse_num(value)?,
            "heads" => self.encoder.heads = parse_num(value)?,
            "windows" => self.encoder.windows = parse_list(value)?,
            "memory_slots" => self.encoder.memory_slots = parse_num(value)?,
            "encoder_dropout" => self.encoder.dropout = parse_num(value)?,
            "variant" => {
                self.encoder.variant =
                    Variant::parse(value).ok_or_else(|| format!("unknown variant `{value}`"))?
            }
            "head_hidden" => self.head_hidden = parse_list(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn join_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse::<T>().map_err(|e| format!("`{s}`: {e}"))
}

pub(crate) fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(parse_num).collect()
}

/// Instantiated forecaster with its parameters.
#[derive(Debug)]
pub struct Tcnformer {
    spec: TcnformerSpec,
    pub tcn: Tcn,
    pub encoder: Encoder,
    pub head: Vec<Dense>,
}

impl Tcnformer {
    /// Builds and initializes a model; identical seeds give identical
    /// parameters.
    pub fn new(spec: TcnformerSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tcn = Tcn::new(&mut rng, &spec.tcn)?;
        let encoder = Encoder::new(&mut rng, &spec.encoder)?;
        let mut head = Vec::new();
        let mut width = spec.lookback * spec.encoder.width;
        for &h in spec.head_hidden.iter().chain(std::iter::once(&spec.horizon)) {
            head.push(Dense::new(&mut rng, width, h));
            width = h;
        }
        Ok(Self { spec, tcn, encoder, head })
    }

    pub fn spec(&self) -> &TcnformerSpec {
        &self.spec
    }

    /// `[B, T]` scaled history → `[B, H]` scaled forecast.
    pub fn forward(&self, x: &Tensor, ctx: &mut Context) -> Result<Tensor> {
        let (t, c) = (self.spec.lookback, self.spec.encoder.width);
        if x.shape().len() != 2 || x.shape()[1] != t {
            return Err(TensorError::Shape {
                op: "tcnformer_forward".into(),
                lhs: x.shape().to_vec(),
                rhs: vec![t],
            });
        }
        let (lo, hi) = SCALED_INPUT_RANGE;
        if let Some(v) = x.data().iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(TensorError::Contract(format!(
                "scaled input {v} outside [{lo}, {hi}]"
            )));
        }
        let b = x.shape()[0];
        let h = tensor::reshape(x, vec![b, 1, t])?;
        let h = self.tcn.forward(&h, ctx)?;
        let h = tensor::permute(&h, &[0, 2, 1])?;
        let h = self.encoder.forward(&h, ctx)?;
        let mut h = tensor::reshape(&h, vec![b, t * c])?;
        for (i, layer) in self.head.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.head.len() {
                h = tensor::relu(&h);
            }
        }
        Ok(h)
    }

    /// Eval-mode batched prediction without gradient tracking.
    pub fn predict(&self, inputs: &Array) -> Result<Array> {
        let y = self.forward(&Tensor::from_array(inputs), &mut Context::eval())?;
        Ok(y.to_array())
    }

    /// Every named tensor, trainable parameters and batch-norm buffers alike,
    /// in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    /// Trainable parameters only.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        self.named_tensors()
            .into_iter()
            .filter(|(_, t)| t.requires_grad())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, t) in self.named_tensors() {
            t.zero_grad();
        }
    }

    /// Copy of every named tensor's values.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.named_tensors().iter().map(|(_, t)| t.to_vec()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f64>]) {
        for ((_, t), values) in self.named_tensors().iter().zip(snapshot) {
            t.data_mut().copy_from_slice(values);
        }
    }

    /// Overwrites parameters from named entries. Every model tensor must be
    /// present with a matching shape and no extra names are allowed.
    pub fn load_entries(
        &self,
        entries: &[(String, Vec<usize>, Vec<f64>)],
    ) -> std::result::Result<(), CheckpointError> {
        let mut by_name: BTreeMap<&str, (&Vec<usize>, &Vec<f64>)> = BTreeMap::new();
        for (name, shape, values) in entries {
            by_name.insert(name.as_str(), (shape, values));
        }
        let tensors = self.named_tensors();
        for name in by_name.keys() {
            if !tensors.iter().any(|(n, _)| n == name) {
                return Err(CheckpointError::corrupt(*name, "unknown parameter name"));
            }
        }
        for (name, t) in &tensors {
            let (shape, values) = by_name
                .get(name.as_str())
                .ok_or_else(|| CheckpointError::corrupt(name.clone(), "parameter missing"))?;
            if shape.as_slice() != t.shape() {
                return Err(CheckpointError::corrupt(
                    name.clone(),
                    format!("shape {:?} does not match model shape {:?}", shape, t.shape()),
                ));
            }
            t.data_mut().copy_from_slice(values);
        }
        Ok(())
    }
}

impl Module for Tcnformer {
    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.tcn.collect(&join(prefix, "tcn"), out);
        self.encoder.collect(&join(prefix, "encoder"), out);
        for (i, d) in self.head.iter().enumerate() {
            d.collect(&join(prefix, &format!("head.{i}")), out);
        }
    }
}
