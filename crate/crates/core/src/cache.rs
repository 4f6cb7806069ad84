//! On-disk preprocessing cache: dense embeddings and varint node lists under
//! a content-addressed directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CACHE_ENV: &str = "GRAPHCONTROL_CACHE";
const EMBEDDING_MAGIC: &[u8; 8] = b"GCEMB\0\x01\0";

/// Cache root: `$GRAPHCONTROL_CACHE`, else `$HOME/.cache/graphcontrol`,
/// else a directory under the system temp dir.
pub fn cache_root() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    match std::env::var_os("HOME") {
        Some(home) => Path::new(&home).join(".cache").join("graphcontrol"),
        None => std::env::temp_dir().join("graphcontrol-cache"),
    }
}

/// Hex SHA-256 of the given byte chunks (length-prefixed so boundaries count).
pub fn content_key<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// 16-byte header (8-byte magic, `N` and `k` as u32) followed by row-major f64.
pub fn encode_embedding(m: ArrayView2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embedding(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 16 || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::Data("embedding file: bad magic".into()));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != n * k * 8 {
        return Err(Error::Data(format!("embedding file: {} payload bytes for {n}x{k}", body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((n, k), data).map_err(|e| Error::Data(e.to_string()))
}

/// LEB128 varints of the gaps of a sorted id list.
pub fn encode_ids(ids: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ids.len() * 2 + 2);
    let mut put = |mut v: u64| loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            break;
        }
        out.push(byte | 0x80);
    };
    put(ids.len() as u64);
    let mut prev = 0usize;
    for &id in ids {
        put((id - prev) as u64);
        prev = id;
    }
    out
}

pub fn decode_ids(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut pos = 0;
    let mut next = || -> Result<u64> {
        let mut v = 0u64;
        let mut shift = 0;
        loop {
            let b = *bytes.get(pos).ok_or_else(|| Error::Data("truncated varint list".into()))?;
            pos += 1;
            if shift > 63 {
                return Err(Error::Data("varint overflow".into()));
            }
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
            shift += 7;
        }
    };
    let len = next()? as usize;
    let mut ids = Vec::with_capacity(len.min(1 << 20));
    let mut prev = 0usize;
    for _ in 0..len {
        prev += next()? as usize;
        ids.push(prev);
    }
    if pos != bytes.len() {
        return Err(Error::Data("trailing bytes after varint list".into()));
    }
    Ok(ids)
}

/// One cache namespace, e.g. all per-node entries of a preprocessing run.
#[derive(Debug, Clone)]
pub struct CacheDir {
    dir: PathBuf,
}

impl CacheDir {
    pub fn open(root: &Path, key: &str) -> Result<Self> {
        let dir = root.join(&key[..2]).join(key);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(CacheDir { dir })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn read(&self, name: &str) -> Option<Vec<u8>> {
        fs::read(self.dir.join(name)).ok()
    }

    /// Write via a temporary file and rename, so readers never see partial data.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.{}.tmp", std::process::id()));
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))
    }
}
