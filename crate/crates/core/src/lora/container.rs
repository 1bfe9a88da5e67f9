//! Self-describing tensor container.
//!
//! Layout:
//!
//! ```text
//! [u64 LE header length N][N bytes JSON header][f32 LE payload][u32 LE CRC32]
//! ```
//!
//! The header maps each tensor name to `{dtype, shape, offset, length}`
//! (offsets relative to the payload start) and carries a `__metadata__`
//! object of string values. The checksum covers every preceding byte.
//! Unknown metadata keys are preserved on load.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const METADATA_KEY: &str = "__metadata__";
pub const KIND_KEY: &str = "kind";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    dtype: String,
    shape: [usize; 2],
    offset: u64,
    length: u64,
}

/// Named tensors plus string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Matrix>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert(KIND_KEY.to_string(), kind.to_string());
        Self { metadata, tensors: BTreeMap::new() }
    }

    pub fn kind(&self) -> Option<&str> {
        self.metadata.get(KIND_KEY).map(String::as_str)
    }

    /// Errors unless the `kind` metadata equals `expected`.
    pub fn expect_kind(&self, expected: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == expected => Ok(()),
            other => Err(Error::Format {
                offset: 8,
                detail: format!("expected a `{expected}` container, found kind {other:?}"),
            }),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        self.tensors.get(name).ok_or_else(|| Error::Format {
            offset: 8,
            detail: format!("missing tensor `{name}`"),
        })
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata.get(key).map(String::as_str).ok_or_else(|| Error::Format {
            offset: 8,
            detail: format!("missing metadata `{key}`"),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = serde_json::Map::new();
        header.insert(METADATA_KEY.to_string(), serde_json::to_value(&self.metadata)?);
        let mut offset = 0u64;
        for (name, m) in &self.tensors {
            if name == METADATA_KEY {
                return Err(Error::Parameter(format!("tensor name `{METADATA_KEY}` is reserved")));
            }
            let length = (m.len() * 4) as u64;
            let entry = TensorEntry { dtype: "f32".into(), shape: [m.rows(), m.cols()], offset, length };
            header.insert(name.clone(), serde_json::to_value(entry)?);
            offset += length;
        }
        let header = serde_json::to_vec(&Value::Object(header))?;
        let mut out = Vec::with_capacity(8 + header.len() + offset as usize + 4);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for m in self.tensors.values() {
            out.extend_from_slice(&m.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, detail: String| Error::Format { offset: offset as u64, detail };
        if bytes.len() < 12 {
            return Err(fail(0, format!("file of {} bytes is too short for a container", bytes.len())));
        }
        let body_end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        if header_len > (body_end - 8) as u64 {
            return Err(fail(0, format!("header length {header_len} exceeds the {} available bytes", body_end - 8)));
        }
        let payload_start = 8 + header_len as usize;
        let actual = crc32fast::hash(&bytes[..body_end]);
        if actual != stored {
            return Err(fail(body_end, format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
        }

        let header: serde_json::Map<String, Value> = serde_json::from_slice(&bytes[8..payload_start])
            .map_err(|e| fail(8, format!("malformed header: {e}")))?;
        let payload = &bytes[payload_start..body_end];
        let mut metadata = BTreeMap::new();
        let mut tensors = BTreeMap::new();
        let mut covered = 0u64;
        for (name, value) in header {
            if name == METADATA_KEY {
                let Value::Object(map) = value else {
                    return Err(fail(8, "metadata is not an object".into()));
                };
                for (k, v) in map {
                    let s = match v {
                        Value::String(s) => s,
                        other => other.to_string(),
                    };
                    metadata.insert(k, s);
                }
                continue;
            }
            let entry: TensorEntry =
                serde_json::from_value(value).map_err(|e| fail(8, format!("tensor `{name}`: {e}")))?;
            if entry.dtype != "f32" {
                return Err(fail(8, format!("tensor `{name}` has unsupported dtype `{}`", entry.dtype)));
            }
            let expect = (entry.shape[0] * entry.shape[1] * 4) as u64;
            if entry.length != expect {
                return Err(fail(8, format!("tensor `{name}` length {} does not match shape", entry.length)));
            }
            let end = entry.offset.checked_add(entry.length).filter(|&e| e <= payload.len() as u64);
            let Some(end) = end else {
                return Err(fail(
                    payload_start + entry.offset as usize,
                    format!("tensor `{name}` runs past the end of the payload"),
                ));
            };
            let raw = &payload[entry.offset as usize..end as usize];
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.insert(name, Matrix::from_vec(entry.shape[0], entry.shape[1], data)?);
            covered += entry.length;
        }
        if covered != payload.len() as u64 {
            return Err(fail(
                payload_start,
                format!("payload has {} bytes but tensors cover {covered}", payload.len()),
            ));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("adapter");
        c.tensors.insert("x".into(), Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f32 - 1.5));
        c.tensors.insert("y".into(), Matrix::filled(1, 4, f32::MIN_POSITIVE));
        c
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_length_mismatch() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[..8].copy_from_slice(&(1u64 << 40).to_le_bytes());
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = sample().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 6] ^= 1;
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_file() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(Container::from_bytes(&bytes[..bytes.len() - 9]), Err(Error::Format { .. })));
        assert!(matches!(Container::from_bytes(&bytes[..5]), Err(Error::Format { offset: 0, .. })));
    }
}
