//! Precomputed per-comment embedding vectors.
//!
//! Two file formats are accepted. JSONL holds one
//! `{"comment_id": str, "vector": [float, ...]}` object per line. The binary
//! format is little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic b"MQEB"
//! 4       4     u32 format version (1)
//! 8       4     u32 dim
//! 12      8     u64 record count
//! then per record:
//!         4     u32 id length in bytes
//!         n     UTF-8 comment id
//!         4*dim f32 vector components
//! ```

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"MQEB";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize, Serialize)]
struct EmbeddingLine {
    comment_id: String,
    vector: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Embedding("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
        })
    }

    pub fn insert(&mut self, comment_id: String, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Embedding(format!(
                "vector for {comment_id:?} has length {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Embedding(format!("non-finite value in vector for {comment_id:?}")));
        }
        if self.vectors.insert(comment_id.clone(), vector).is_some() {
            return Err(Error::Embedding(format!("duplicate comment_id {comment_id:?}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, comment_id: &str) -> Option<&[f64]> {
        self.vectors.get(comment_id).map(Vec::as_slice)
    }

    fn sorted_ids(&self) -> Vec<&String> {
        let mut ids: Vec<&String> = self.vectors.keys().collect();
        ids.sort();
        ids
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for id in self.sorted_ids() {
            let line = EmbeddingLine {
                comment_id: id.clone(),
                vector: self.vectors[id].clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        }
        Ok(())
    }

    /// Binary export; components are narrowed to `f32`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(BINARY_MAGIC);
        buf.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.vectors.len() as u64).to_le_bytes());
        for id in self.sorted_ids() {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for &v in &self.vectors[id] {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.write_all(&buf).map_err(|e| Error::io("<output>", e))
    }

    pub fn from_jsonl(bytes: &[u8]) -> Result<Self> {
        let mut table: Option<Self> = None;
        for (n, line) in BufReader::new(bytes).lines().enumerate() {
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingLine = serde_json::from_str(&line)
                .map_err(|e| Error::Embedding(format!("line {}: {e}", n + 1)))?;
            let t = match &mut table {
                Some(t) => t,
                None => table.insert(Self::new(rec.vector.len())?),
            };
            t.insert(rec.comment_id, rec.vector)?;
        }
        table.ok_or_else(|| Error::Embedding("no vectors".into()))
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader(bytes);
        if r.take(4)? != BINARY_MAGIC {
            return Err(Error::Embedding("bad magic".into()));
        }
        let version = r.u32()?;
        if version != BINARY_VERSION {
            return Err(Error::Embedding(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let mut table = Self::new(dim)?;
        for _ in 0..count {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Embedding("comment id is not UTF-8".into()))?
                .to_string();
            let vector = r
                .take(4 * dim)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            table.insert(id, vector)?;
        }
        if !r.0.is_empty() {
            return Err(Error::Embedding("trailing bytes after last record".into()));
        }
        Ok(table)
    }
}

struct ByteReader<'a>(&'a [u8]);

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Embedding("truncated binary embedding file".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Loads an embedding file, detecting the binary format by its magic bytes.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        EmbeddingTable::from_binary(&bytes)
    } else {
        EmbeddingTable::from_jsonl(&bytes)
    }
}
