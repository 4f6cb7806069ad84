//! Versioned binary encoder checkpoints.
//!
//! Layout (little-endian): magic `GCCKPT\0\0`, format version u32, k, l and
//! layer count u32, metadata JSON (u32 length + bytes), tensor count u32, then
//! per tensor: name (u16 length + UTF-8), rank u8, dims u32 each, f32 data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PretrainConfig;
use crate::error::{Error, Result};
use crate::nn::{GinEncoder, Params};

pub const MAGIC: &[u8; 8] = b"GCCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: GinEncoder<f32>,
    pub config: PretrainConfig,
    pub source: String,
    pub version: u32,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: PretrainConfig,
    source: String,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(encoder: GinEncoder<f32>, config: PretrainConfig, source: impl Into<String>) -> Self {
        Checkpoint {
            encoder,
            config,
            source: source.into(),
            version: FORMAT_VERSION,
        }
    }

    /// `(k, l, layers)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.encoder.input_dim(), self.encoder.output_dim(), self.encoder.num_layers())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (k, l, layers) = self.dims();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [self.version, k as u32, l as u32, layers as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let meta = serde_json::to_vec(&Meta {
            config: self.config.clone(),
            source: self.source.clone(),
        })
        .expect("config serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let tensors = self.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, dims, data) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dims.len() as u8);
            for d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out = Vec::new();
        for (i, layer) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.layers.{i}.eps"), vec![1], layer.eps.as_slice().unwrap()));
            for (tag, lin) in [("lin1", &layer.lin1), ("lin2", &layer.lin2)] {
                let p = format!("encoder.layers.{i}.{tag}");
                out.push((format!("{p}.weight"), lin.weight.shape().to_vec(), lin.weight.as_slice().unwrap()));
                out.push((format!("{p}.bias"), lin.bias.shape().to_vec(), lin.bias.as_slice().unwrap()));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let (k, l, layers) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if layers == 0 {
            return Err(Error::Data("checkpoint declares zero layers".into()));
        }
        let meta_len = r.u32()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Data(format!("checkpoint metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut encoder = GinEncoder::<f32>::zeros(k, l, layers);
        let expected: Vec<(String, Vec<usize>)> = Checkpoint::new(encoder.clone(), meta.config.clone(), "")
            .tensors()
            .into_iter()
            .map(|(n, d, _)| (n, d))
            .collect();
        if count != expected.len() {
            return Err(Error::Data(format!("checkpoint has {count} tensors, expected {}", expected.len())));
        }
        let mut slots = encoder.params_mut().into_iter();
        for (name, dims) in expected {
            let nlen = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let got = std::str::from_utf8(r.take(nlen)?).map_err(|_| Error::Data("tensor name is not UTF-8".into()))?;
            if got != name {
                return Err(Error::Data(format!("tensor '{got}' where '{name}' was expected")));
            }
            let rank = r.take(1)?[0] as usize;
            let got_dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if got_dims != dims {
                return Err(Error::Data(format!("tensor '{name}' has shape {got_dims:?}, expected {dims:?}")));
            }
            let slot = slots.next().unwrap();
            let raw = r.take(slot.len() * 4)?;
            for (dst, src) in slot.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(src.try_into().unwrap());
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Data("trailing bytes after checkpoint tensors".into()));
        }
        Ok(Checkpoint {
            encoder,
            config: meta.config,
            source: meta.source,
            version,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Error unless the encoder has exactly these dimensions.
    pub fn expect_dims(&self, k: usize, l: usize, layers: usize) -> Result<()> {
        if self.dims() != (k, l, layers) {
            return Err(Error::Shape(format!(
                "checkpoint dims (k, l, layers) = {:?}, expected ({k}, {l}, {layers})",
                self.dims()
            )));
        }
        Ok(())
    }
}
