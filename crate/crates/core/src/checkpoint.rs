//! Binary model checkpoints.
//!
//! Layout (little-endian):
//! `"AGAH"` | u32 version | u32 n + n bytes of TOML header | u32 block count |
//! blocks | u32 CRC-32 of every preceding byte.
//! A block is u32 name length, UTF-8 name, u32 rank (always 2), u32 rows,
//! u32 cols, then rows·cols f64 values in row-major order.
//! Parameter blocks come in canonical parameter order, followed by the
//! `input_stats` block.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{InputStats, Model, ModelConfig};
use crate::params::ParamTree;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AGAH";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const STATS_BLOCK: &str = "input_stats";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    feature_dim: usize,
    feature_names: Vec<String>,
    param_count: usize,
    model: ModelConfig,
}

/// A trained model plus the dataset columns it was fitted on.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub feature_names: Vec<String>,
}

impl Checkpoint {
    pub fn new(model: Model, feature_names: Vec<String>) -> Self {
        Self { model, feature_names }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        if self.feature_names.len() != m.feature_dim {
            return Err(Error::InvalidArgument(format!(
                "{} feature names for a model with {} inputs",
                self.feature_names.len(),
                m.feature_dim
            )));
        }
        let header = Header {
            feature_dim: m.feature_dim,
            feature_names: self.feature_names.clone(),
            param_count: m.param_count(),
            model: m.config.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Format(format!("cannot serialize header: {e}")))?;
        let mut blocks: Vec<(String, Tensor)> = Vec::new();
        m.params.visit("", &mut |n, t| blocks.push((n.to_string(), t.clone())));
        blocks.push((STATS_BLOCK.to_string(), m.stats.to_tensor()));

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_len(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        put_len(&mut out, blocks.len())?;
        for (name, t) in &blocks {
            put_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, 2);
            put_len(&mut out, t.rows())?;
            put_len(&mut out, t.cols())?;
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Format(format!("checkpoint checksum mismatch (stored {stored:08x}, computed {actual:08x})")));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let header: Header = toml::from_str(text).map_err(|e| Error::Format(format!("bad checkpoint header: {}", e.message())))?;

        let count = r.u32()? as usize;
        let mut blocks: HashMap<String, Tensor> = HashMap::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("block name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()?;
            if rank != 2 {
                return Err(Error::Format(format!("block '{name}' has rank {rank}, expected 2")));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let size = rows.checked_mul(cols).and_then(|s| s.checked_mul(8)).ok_or_else(|| {
                Error::Format(format!("block '{name}' is too large"))
            })?;
            let data = r.take(size)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let tensor = Tensor::from_vec(rows, cols, data)?;
            if blocks.insert(name.clone(), tensor).is_some() {
                return Err(Error::Format(format!("block '{name}' appears twice")));
            }
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!("{} trailing bytes after the last block", body.len() - r.pos)));
        }

        let mut model = Model::new(header.model, header.feature_dim, 0)
            .map_err(|e| Error::Format(format!("checkpoint header describes an invalid model: {e}")))?;
        let mut failure = None;
        model.params.visit_mut("", &mut |name, slot| {
            if failure.is_some() {
                return;
            }
            match blocks.remove(name) {
                Some(t) if t.shape() == slot.shape() => *slot = t,
                Some(t) => {
                    failure = Some(format!("block '{name}' has shape {:?}, expected {:?}", t.shape(), slot.shape()))
                }
                None => failure = Some(format!("parameter '{name}' is missing")),
            }
        });
        if let Some(msg) = failure {
            return Err(Error::Format(msg));
        }
        let stats = blocks.remove(STATS_BLOCK).ok_or_else(|| Error::Format(format!("block '{STATS_BLOCK}' is missing")))?;
        model.stats = InputStats::from_tensor(&stats)?;
        if let Some(extra) = blocks.keys().min() {
            return Err(Error::Format(format!("unexpected block '{extra}'")));
        }
        if model.param_count() != header.param_count {
            return Err(Error::Format(format!(
                "header records {} parameters, blocks hold {}",
                header.param_count,
                model.param_count()
            )));
        }
        if header.feature_names.len() != header.feature_dim {
            return Err(Error::Format("feature name count disagrees with the input width".into()));
        }
        Ok(Self { model, feature_names: header.feature_names })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Checks that a dataset has the columns the model was trained on.
    pub fn check_columns(&self, names: &[String]) -> Result<()> {
        if names.len() != self.feature_names.len() {
            return Err(Error::Data(format!(
                "dataset has {} feature columns, checkpoint expects {}",
                names.len(),
                self.feature_names.len()
            )));
        }
        for (i, (a, b)) in names.iter().zip(&self.feature_names).enumerate() {
            if a != b {
                return Err(Error::Data(format!("feature column {i} is '{a}', checkpoint expects '{b}'")));
            }
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| Error::Format(format!("length {n} does not fit in 32 bits")))?;
    put_u32(out, v);
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
