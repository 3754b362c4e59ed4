//! Binary checkpoint format.
//!
//! ```text
//! offset  size  content
//! 0       8     magic b"TCNFCKPT"
//! 8       4     header length N, u32 little-endian
//! 12      N     UTF-8 header, one `key=value` record per line ('\n')
//! 12+N    ...   payloads: for each entry, in header order,
//!               4·numel bytes of f32 little-endian, row-major
//! ```
//!
//! Header records, in this order:
//!
//! ```text
//! format_version=1
//! epoch=<usize>
//! best_val_loss=<f64>
//! seed=<u64>
//! scaler_min=<f64>
//! scaler_max=<f64>
//! spec.<key>=<value>        one per model-spec key
//! entry_count=<n>
//! entry.<i>=<name>:<d0>x<d1>x...:<byte length>
//! ```
//!
//! Floats in the header use Rust's shortest round-trip formatting, so
//! metadata survives a save/load cycle exactly.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use crate::data::ScalerParams;
use crate::error::CheckpointError;
use crate::model::{Tcnformer, TcnformerSpec};

type Result<T> = std::result::Result<T, CheckpointError>;

pub const MAGIC: &[u8; 8] = b"TCNFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub best_val_loss: f64,
    pub seed: u64,
    pub scaler: ScalerParams,
    pub spec: TcnformerSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_model(model: &Tcnformer, meta: CheckpointMeta) -> Self {
        let entries = model
            .named_tensors()
            .into_iter()
            .map(|(name, t)| CheckpointEntry {
                name,
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Self { meta, entries }
    }

    /// Rebuilds the model described by the metadata and loads the stored
    /// parameters into it.
    pub fn to_model(&self) -> Result<Tcnformer> {
        let model = Tcnformer::new(self.meta.spec.clone(), self.meta.seed)
            .map_err(|e| CheckpointError::corrupt("spec", e.to_string()))?;
        self.load_into(&model)?;
        Ok(model)
    }

    pub fn load_into(&self, model: &Tcnformer) -> Result<()> {
        let entries: Vec<_> = self
            .entries
            .iter()
            .map(|e| {
                (
                    e.name.clone(),
                    e.shape.clone(),
                    e.values.iter().map(|&v| v as f64).collect(),
                )
            })
            .collect();
        model.load_entries(&entries)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        let mut rec = |k: &str, v: String| {
            header.push_str(k);
            header.push('=');
            header.push_str(&v);
            header.push('\n');
        };
        let m = &self.meta;
        rec("format_version", FORMAT_VERSION.to_string());
        rec("epoch", m.epoch.to_string());
        rec("best_val_loss", m.best_val_loss.to_string());
        rec("seed", m.seed.to_string());
        rec("scaler_min", m.scaler.min.to_string());
        rec("scaler_max", m.scaler.max.to_string());
        for (k, v) in m.spec.to_kv() {
            rec(&format!("spec.{k}"), v);
        }
        rec("entry_count", self.entries.len().to_string());
        for (i, e) in self.entries.iter().enumerate() {
            let dims = e.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            rec(&format!("entry.{i}"), format!("{}:{}:{}", e.name, dims, 4 * e.values.len()));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for e in &self.entries {
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::corrupt("magic", "not a checkpoint file"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CheckpointError::corrupt("header_length", "header runs past end of file"))?;
        let header = std::str::from_utf8(&bytes[12..header_end])
            .map_err(|_| CheckpointError::corrupt("header", "not valid UTF-8"))?;

        let mut records: BTreeMap<&str, &str> = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CheckpointError::corrupt("header", format!("malformed record `{line}`")))?;
            records.insert(k, v);
        }
        let get = |k: &str| {
            records
                .get(k)
                .copied()
                .ok_or_else(|| CheckpointError::corrupt(k, "missing"))
        };
        fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| CheckpointError::corrupt(k, format!("unparseable value `{v}`")))
        }

        let version: u32 = parse("format_version", get("format_version")?)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::corrupt(
                "format_version",
                format!("expected {FORMAT_VERSION}, found {version}"),
            ));
        }
        let scaler = ScalerParams {
            min: parse("scaler_min", get("scaler_min")?)?,
            max: parse("scaler_max", get("scaler_max")?)?,
        };
        let mut spec = TcnformerSpec::default();
        for (k, v) in &records {
            if let Some(key) = k.strip_prefix("spec.") {
                match spec.set_kv(key, v) {
                    Ok(true) => {}
                    Ok(false) => return Err(CheckpointError::corrupt(*k, "unknown spec key")),
                    Err(msg) => return Err(CheckpointError::corrupt(*k, msg)),
                }
            }
        }
        let meta = CheckpointMeta {
            epoch: parse("epoch", get("epoch")?)?,
            best_val_loss: parse("best_val_loss", get("best_val_loss")?)?,
            seed: parse("seed", get("seed")?)?,
            scaler,
            spec,
        };

        let count: usize = parse("entry_count", get("entry_count")?)?;
        let mut entries = Vec::with_capacity(count);
        let mut names = HashSet::new();
        let mut offset = header_end;
        for i in 0..count {
            let field = format!("entry.{i}");
            let rec = get(&field)?;
            let mut parts = rec.rsplitn(3, ':');
            let (Some(len), Some(dims), Some(name)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(CheckpointError::corrupt(field, format!("malformed entry `{rec}`")));
            };
            let shape = dims
                .split('x')
                .map(|d| parse::<usize>(&field, d))
                .collect::<Result<Vec<_>>>()?;
            let byte_len: usize = parse(&field, len)?;
            let numel: usize = shape.iter().product();
            if byte_len != 4 * numel {
                return Err(CheckpointError::corrupt(
                    field,
                    format!("byte length {byte_len} does not match shape {shape:?}"),
                ));
            }
            if !names.insert(name.to_string()) {
                return Err(CheckpointError::corrupt(field, format!("duplicate name `{name}`")));
            }
            let end = offset + byte_len;
            if end > bytes.len() {
                return Err(CheckpointError::corrupt(
                    field,
                    "payload truncated",
                ));
            }
            let values = bytes[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset = end;
            entries.push(CheckpointEntry {
                name: name.to_string(),
                shape,
                values,
            });
        }
        if offset != bytes.len() {
            return Err(CheckpointError::corrupt(
                "payload",
                format!("{} trailing bytes", bytes.len() - offset),
            ));
        }
        Ok(Self { meta, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
