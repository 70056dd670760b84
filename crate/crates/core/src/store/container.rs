//! Byte layout of the single-file container.
//!
//! ```text
//! "SRNN" | version u32 | manifest_len u64 | manifest (JSON, UTF-8) | pad to 8
//! blob*:  len u64 | crc32 u32 | reserved u32 | payload | pad to 8
//! ```
//!
//! All integers are little-endian. Manifest entries refer to blobs by index.

use serde::{Deserialize, Serialize};

use super::StoreError;

pub const MAGIC: &[u8; 4] = b"SRNN";
pub const FORMAT_VERSION: u32 = 1;
const ALIGN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "i8")]
    I8,
    #[serde(rename = "i16")]
    I16,
    #[serde(rename = "i32")]
    I32,
    #[serde(rename = "bitmask")]
    Bitmask,
    #[serde(rename = "csr-i8")]
    CsrI8,
    #[serde(rename = "csr-i16")]
    CsrI16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Dense,
    Csr,
    Packed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub role: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub layout: Layout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nnz: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    pub blob: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn pad(buf: &mut Vec<u8>) {
    while buf.len() % ALIGN != 0 {
        buf.push(0);
    }
}

pub fn write(manifest: &Manifest, blobs: &[Vec<u8>]) -> Vec<u8> {
    let json = serde_json::to_vec(manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(json.len() + blobs.iter().map(|b| b.len() + 24).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    pad(&mut out);
    for b in blobs {
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(b).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(b);
        pad(&mut out);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| StoreError::Malformed(format!("truncated {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn align(&mut self) -> Result<(), StoreError> {
        let rem = self.pos % ALIGN;
        if rem != 0 {
            let padding = self.take(ALIGN - rem, "padding")?;
            if padding.iter().any(|&b| b != 0) {
                return Err(StoreError::Malformed("nonzero padding".into()));
            }
        }
        Ok(())
    }
}

struct RawBlob<'a> {
    crc: u32,
    payload: &'a [u8],
}

/// Parses the container and returns the manifest with one verified payload
/// per manifest entry, in entry order.
pub fn read(bytes: &[u8]) -> Result<(Manifest, Vec<&[u8]>), StoreError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(StoreError::BadMagic);
    }
    cur.pos = 4;
    let version = cur.u32("version")?;
    if version > FORMAT_VERSION {
        return Err(StoreError::VersionTooNew {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if version == 0 {
        return Err(StoreError::Malformed("format version 0".into()));
    }
    let len = usize::try_from(cur.u64("manifest length")?)
        .map_err(|_| StoreError::Malformed("manifest length".into()))?;
    let manifest: Manifest = serde_json::from_slice(cur.take(len, "manifest")?)
        .map_err(|e| StoreError::Malformed(format!("manifest: {e}")))?;
    cur.align()?;

    let mut blobs = Vec::new();
    while cur.pos < bytes.len() {
        let n = usize::try_from(cur.u64("blob length")?)
            .map_err(|_| StoreError::Malformed("blob length".into()))?;
        let crc = cur.u32("blob crc")?;
        if cur.u32("blob header")? != 0 {
            return Err(StoreError::Malformed("reserved blob field is nonzero".into()));
        }
        let payload = cur.take(n, "blob payload")?;
        cur.align()?;
        blobs.push(RawBlob { crc, payload });
    }

    let mut used = vec![false; blobs.len()];
    let mut payloads = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let blob = blobs.get(t.blob).ok_or_else(|| StoreError::Dangling {
            tensor: t.name.clone(),
        })?;
        if std::mem::replace(&mut used[t.blob], true) {
            return Err(StoreError::Malformed(format!(
                "blob {} is claimed by more than one tensor",
                t.blob
            )));
        }
        if crc32fast::hash(blob.payload) != blob.crc {
            return Err(StoreError::Crc {
                tensor: t.name.clone(),
            });
        }
        payloads.push(blob.payload);
    }
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(StoreError::Malformed(format!("blob {i} is not named by the manifest")));
    }
    Ok((manifest, payloads))
}
