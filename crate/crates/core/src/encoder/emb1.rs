//! EMB1 embedding interchange files.
//!
//! ```text
//! b"EMB1" | u32 LE dim | u64 LE count | count x (u16 LE id_len | id bytes | dim x f32 LE)
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::encoder::Embedding;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub records: Vec<(String, Embedding)>,
}

impl EmbeddingFile {
    pub fn to_map(&self) -> HashMap<String, Embedding> {
        self.records.iter().cloned().collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.records.len() * (8 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (id, e) in &self.records {
            if e.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: e.dim(),
                });
            }
            let id_len = u16::try_from(id.len())
                .map_err(|_| Error::Config(format!("id `{id}` longer than 65535 bytes")))?;
            out.extend_from_slice(&id_len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in e.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a file image. With `expected_dim`, a header dim that differs is
    /// a [`Error::DimensionMismatch`].
    pub fn decode(bytes: &[u8], expected_dim: Option<usize>) -> Result<Self> {
        let mut reader = Reader { bytes, pos: 0 };
        if reader.take(4, "magic")? != MAGIC {
            return Err(Error::BadMagic);
        }
        let dim = u32::from_le_bytes(reader.take(4, "dim")?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(reader.take(8, "count")?.try_into().unwrap());
        if let Some(expected) = expected_dim {
            if expected != dim {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: dim,
                });
            }
        }
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for i in 0..count {
            let what = format!("record {i} of {count}");
            let id_len = u16::from_le_bytes(reader.take(2, &what)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(reader.take(id_len, &what)?)
                .map_err(|_| Error::Parse {
                    line: i as usize,
                    message: "id is not valid UTF-8".into(),
                })?
                .to_owned();
            let values = reader
                .take(4 * dim, &what)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            records.push((id, Embedding::new(values)?));
        }
        Ok(Self { dim, records })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::TruncatedFile(format!(
                "{what}: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
}

pub fn write_embedding_file(path: &Path, file: &EmbeddingFile) -> Result<()> {
    fs::write(path, file.encode()?).map_err(|e| Error::io(path, e))
}

pub fn load_embedding_file(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingFile::decode(&bytes, expected_dim)
}
