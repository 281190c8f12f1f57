//! Versioned binary checkpoints: a magic tag, a JSON header and the raw
//! little-endian `f32` parameters.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{Architecture, PolicyNet};

pub const MAGIC: &[u8; 8] = b"WFCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("parameter count {found} does not match the architecture's {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("parameter checksum mismatch")]
    ChecksumMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub architecture: Architecture,
    pub n_params: usize,
    pub dtype: String,
    /// Environment steps trained when the checkpoint was taken.
    pub step: u64,
    pub phase: u8,
    pub checksum: String,
}

/// Writes atomically via a temporary sibling file.
pub fn save_checkpoint(
    path: &Path,
    net: &PolicyNet<f32>,
    step: u64,
    phase: u8,
) -> Result<CheckpointMeta, CheckpointError> {
    let meta = CheckpointMeta {
        version: VERSION,
        architecture: net.architecture().clone(),
        n_params: net.n_params(),
        dtype: "f32".into(),
        step,
        phase,
        checksum: net.checksum(),
    };
    let header = serde_json::to_vec(&meta)?;
    let mut bytes = Vec::with_capacity(16 + header.len() + 4 * net.n_params());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    for p in net.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyNet<f32>, CheckpointMeta), CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(if bytes.starts_with(&MAGIC[..bytes.len().min(8)]) {
            CheckpointError::Truncated
        } else {
            CheckpointError::BadMagic
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(8);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let header_len = u32_at(12) as usize;
    let body = 16 + header_len;
    if bytes.len() < body {
        return Err(CheckpointError::Truncated);
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..body])?;
    let mut net = PolicyNet::<f32>::zeroed(meta.architecture.clone());
    let expected = net.n_params();
    if meta.n_params != expected {
        return Err(CheckpointError::SizeMismatch {
            expected,
            found: meta.n_params,
        });
    }
    let raw = &bytes[body..];
    if raw.len() != 4 * expected {
        return Err(CheckpointError::SizeMismatch {
            expected,
            found: raw.len() / 4,
        });
    }
    for (p, chunk) in net.params_mut().iter_mut().zip(raw.chunks_exact(4)) {
        *p = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
    }
    if net.checksum() != meta.checksum {
        return Err(CheckpointError::ChecksumMismatch);
    }
    Ok((net, meta))
}
