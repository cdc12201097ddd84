//! Binary checkpoint container.
//!
//! Layout: the magic `HYDRAPCK`, a little-endian `u32` format version, a
//! `u64` header length, the JSON header, the tensor payload (little-endian
//! `f64`, in manifest order) and a trailing CRC32 of every preceding byte.

use std::fs;
use std::path::Path;

use hydraprompt_core::pipeline::{Checkpoint, TrainConfig, CHECKPOINT_VERSION};
use hydraprompt_core::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: &[u8; 8] = b"HYDRAPCK";
const PREFIX: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    seed: u64,
    step: u64,
    tensors: Vec<TensorEntry>,
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(ck.params.len());
    let mut payload = Vec::new();
    for (name, entry) in ck.params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            dtype: "f64".into(),
            shape: entry.tensor.shape().to_vec(),
            offset: payload.len() as u64,
            trainable: entry.trainable,
        });
        for v in entry.tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        config: ck.config.clone(),
        seed: ck.seed,
        step: ck.step,
        tensors,
    })?;
    let mut out = Vec::with_capacity(PREFIX + header.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ck.version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let magic_len = bytes.len().min(MAGIC.len());
    if bytes[..magic_len] != MAGIC[..magic_len] || bytes.is_empty() {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < PREFIX + 4 {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("four bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("eight bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| PREFIX.checked_add(n))
        .filter(|&end| end <= body.len())
        .ok_or_else(|| CheckpointError::Header(format!("header length {header_len} exceeds the file")))?;
    let header: Header = serde_json::from_slice(&body[PREFIX..header_end])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let payload = &body[header_end..];

    let mut params = ParamStore::new();
    let mut expected_offset = 0u64;
    for t in &header.tensors {
        if t.dtype != "f64" {
            return Err(CheckpointError::Header(format!("`{}` has unsupported dtype `{}`", t.name, t.dtype)));
        }
        if t.offset != expected_offset {
            return Err(CheckpointError::Header(format!(
                "`{}` starts at byte {} instead of {expected_offset}",
                t.name, t.offset
            )));
        }
        let count: usize = t.shape.iter().product();
        let start = t.offset as usize;
        let end = start
            .checked_add(count * 8)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| CheckpointError::Header(format!("`{}` runs past the payload", t.name)))?;
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        let tensor = Tensor::new(&t.shape, data).map_err(|e| CheckpointError::Header(e.to_string()))?;
        params
            .insert(&t.name, tensor, t.trainable)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        expected_offset = end as u64;
    }
    if expected_offset as usize != payload.len() {
        return Err(CheckpointError::Header(format!(
            "{} trailing payload bytes",
            payload.len() - expected_offset as usize
        )));
    }
    let ck = Checkpoint {
        version,
        config: header.config,
        seed: header.seed,
        step: header.step,
        params,
    };
    match ck.frozen_matches_seed() {
        Ok(true) => Ok(ck),
        Ok(false) => Err(CheckpointError::FrozenMismatch(ck.seed)),
        Err(e) => Err(CheckpointError::Header(e.to_string())),
    }
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode(ck)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}
