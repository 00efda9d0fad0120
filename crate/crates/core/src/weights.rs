//! `NSL1` weight file.
//!
//! Layout: magic `NSL1`, a u32 little-endian header length, a JSON header
//! with the model config and the ordered tensor index, then the tensor
//! blobs as row-major little-endian f32. Offsets in the index are relative
//! to the start of the blob section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tensor_layout, Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"NSL1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: u64,
    nbytes: u64,
}

/// Serializes `model` to the `NSL1` byte format.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut offset = 0u64;
    let tensors = model.tensors();
    let index = tensors
        .iter()
        .map(|t| {
            let nbytes = (t.data.len() * 4) as u64;
            let entry = TensorEntry {
                name: t.name.to_string(),
                shape: t.shape,
                offset,
                nbytes,
            };
            offset += nbytes;
            entry
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        tensors: index,
    })
    .expect("header serializes");

    let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in &tensors {
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses an `NSL1` byte buffer.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let fmt = |offset: usize, reason: String| Error::Format {
        offset: offset as u64,
        reason,
    };
    if bytes.len() < 8 {
        return Err(fmt(bytes.len(), "file shorter than the 8-byte preamble".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(fmt(0, format!("bad magic {:?}, expected \"NSL1\"", &bytes[..4])));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let blob_start = 8 + header_len;
    if bytes.len() < blob_start {
        return Err(fmt(
            bytes.len(),
            format!("truncated header: declared {header_len} bytes ending at {blob_start}"),
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[8..blob_start])
        .map_err(|e| fmt(8, format!("invalid header JSON: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| fmt(8, format!("invalid config in header: {e}")))?;

    let layout = tensor_layout(&header.config);
    if layout.len() != header.tensors.len() {
        return Err(fmt(
            8,
            format!(
                "header lists {} tensors, config implies {}",
                header.tensors.len(),
                layout.len()
            ),
        ));
    }
    let blob = &bytes[blob_start..];
    let mut expected_offset = 0u64;
    let mut tensors = Vec::with_capacity(layout.len());
    for (entry, (name, shape)) in header.tensors.iter().zip(&layout) {
        let want_bytes = (shape[0] * shape[1] * 4) as u64;
        if &entry.name != name || entry.shape != *shape || entry.nbytes != want_bytes {
            return Err(fmt(
                8,
                format!(
                    "tensor {} {:?} ({} bytes) does not match expected {} {:?} ({} bytes)",
                    entry.name, entry.shape, entry.nbytes, name, shape, want_bytes
                ),
            ));
        }
        if entry.offset != expected_offset {
            return Err(fmt(
                blob_start + entry.offset as usize,
                format!("tensor {name} offset {} is not contiguous (expected {expected_offset})", entry.offset),
            ));
        }
        let end = (entry.offset + entry.nbytes) as usize;
        if end > blob.len() {
            return Err(fmt(
                bytes.len(),
                format!(
                    "truncated blob: tensor {name} ends at byte {} but file has {}",
                    blob_start + end,
                    bytes.len()
                ),
            ));
        }
        let data = blob[entry.offset as usize..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name.clone(), data));
        expected_offset += entry.nbytes;
    }
    if blob.len() as u64 != expected_offset {
        return Err(fmt(
            blob_start + expected_offset as usize,
            format!(
                "header/blob size mismatch: header covers {expected_offset} blob bytes, file has {}",
                blob.len()
            ),
        ));
    }
    Model::from_tensors(header.config, tensors)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
