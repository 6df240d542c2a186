//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `EMPCKPT\0`, a little-endian `u32` version, a
//! little-endian `u64` header length, the JSON header, then one block per
//! header entry in declared order, each a little-endian array of `f32`
//! (default) or `f64` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig};
use super::params::{Param, ParamStore};
use super::transformer::ModelConfig;
use crate::error::{Error, Result};
use crate::textproc::Vocabulary;

pub const MAGIC: &[u8; 8] = b"EMPCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub config: AdamWConfig,
    pub step: u64,
    pub pending_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub model: ModelConfig,
    pub vocab_hash: String,
    pub vocab: Vec<String>,
    pub step: u64,
    pub dtype: DType,
    #[serde(default)]
    pub extra: serde_json::Value,
    pub blocks: Vec<BlockEntry>,
    pub optimizer: Option<OptimizerEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
    pub optimizer: Option<AdamW>,
}

impl Checkpoint {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_tokens(self.header.vocab.clone())
    }
}

const M_PREFIX: &str = "adam.m:";
const V_PREFIX: &str = "adam.v:";
const PENDING_PREFIX: &str = "adam.pending:";

fn write_values(out: &mut Vec<u8>, values: &[f64], dtype: DType) {
    match dtype {
        DType::F32 => values.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        DType::F64 => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
}

pub struct CheckpointWriter<'a> {
    pub kind: &'a str,
    pub model: &'a ModelConfig,
    pub vocab: &'a Vocabulary,
    pub params: &'a ParamStore,
    pub optimizer: Option<&'a AdamW>,
    pub extra: serde_json::Value,
    pub dtype: DType,
}

impl CheckpointWriter<'_> {
    pub fn encode(&self) -> Vec<u8> {
        let mut blocks: Vec<BlockEntry> = self
            .params
            .iter()
            .map(|p| BlockEntry {
                name: p.name.clone(),
                rows: p.rows,
                cols: p.cols,
                decay: p.decay,
            })
            .collect();
        let mut data: Vec<&[f64]> = self.params.iter().map(|p| p.data.as_slice()).collect();
        if let Some(opt) = self.optimizer {
            for (prefix, bufs) in [(M_PREFIX, &opt.m), (V_PREFIX, &opt.v), (PENDING_PREFIX, &opt.pending)] {
                for (p, buf) in self.params.iter().zip(bufs) {
                    blocks.push(BlockEntry {
                        name: format!("{prefix}{}", p.name),
                        rows: p.rows,
                        cols: p.cols,
                        decay: false,
                    });
                    data.push(buf);
                }
            }
        }
        let header = CheckpointHeader {
            kind: self.kind.to_string(),
            model: *self.model,
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.tokens().to_vec(),
            step: self.optimizer.map_or(0, |o| o.step),
            dtype: self.dtype,
            extra: self.extra.clone(),
            blocks,
            optimizer: self.optimizer.map(|o| OptimizerEntry {
                config: o.config,
                step: o.step,
                pending_count: o.pending_count,
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 16 + 8 * self.params.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for values in data {
            write_values(&mut out, values, self.dtype);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn values(&mut self, n: usize, dtype: DType) -> Result<Vec<f64>> {
        match dtype {
            DType::F32 => Ok(self
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect()),
            DType::F64 => Ok(self
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()),
        }
    }
}

/// Decode a checkpoint. With `expected_vocab`, refuse checkpoints trained
/// against a different vocabulary.
pub fn decode_checkpoint(bytes: &[u8], expected_vocab: Option<&Vocabulary>) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| bad(format!("header: {e}")))?;
    header.model.validate()?;
    let vocab = Vocabulary::from_tokens(header.vocab.clone())?;
    if vocab.hash() != header.vocab_hash {
        return Err(bad("embedded vocabulary does not match its recorded hash"));
    }
    if let Some(v) = expected_vocab {
        if v.hash() != header.vocab_hash {
            return Err(bad(format!(
                "vocabulary hash mismatch: checkpoint {} vs expected {}",
                header.vocab_hash,
                v.hash()
            )));
        }
    }
    if vocab.len() != header.model.vocab_size {
        return Err(bad("model vocab_size disagrees with embedded vocabulary"));
    }

    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    let mut pending = Vec::new();
    for b in &header.blocks {
        let values = r.values(b.rows * b.cols, header.dtype)?;
        if b.name.starts_with(M_PREFIX) {
            m.push(values);
        } else if b.name.starts_with(V_PREFIX) {
            v.push(values);
        } else if b.name.starts_with(PENDING_PREFIX) {
            pending.push(values);
        } else {
            params.push_raw(Param {
                name: b.name.clone(),
                rows: b.rows,
                cols: b.cols,
                data: values,
                decay: b.decay,
            })?;
        }
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after last block"));
    }
    let optimizer = match &header.optimizer {
        Some(o) => {
            let n = params.len();
            if m.len() != n || v.len() != n || pending.len() != n {
                return Err(bad("optimizer state does not cover every parameter"));
            }
            Some(AdamW {
                config: o.config,
                m,
                v,
                step: o.step,
                pending,
                pending_count: o.pending_count,
            })
        }
        None => None,
    };
    Ok(Checkpoint {
        header,
        params,
        optimizer,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected_vocab: Option<&Vocabulary>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected_vocab)
}
