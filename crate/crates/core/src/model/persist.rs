//! Binary weight files.
//!
//! Layout: 8-byte magic, u64 LE header length, JSON header, then every tensor's
//! values as f64 LE in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BaseLearner, ModelConfig, ModelError, Variant, Weights};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"IETPWGT\0";
pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    index: usize,
    variant: Variant,
    config: ModelConfig,
    checksum: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `learner` to `path`; returns the hex SHA-256 of the file bytes.
pub fn write_weights(learner: &BaseLearner, path: &Path) -> Result<String, ModelError> {
    let header = Header {
        version: WEIGHTS_FORMAT_VERSION,
        index: learner.index,
        variant: learner.variant,
        config: learner.config.clone(),
        checksum: learner.checksum(),
        tensors: learner
            .weights
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Format(e.to_string()))?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 8 * learner.weights.param_count());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, t) in learner.weights.iter() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    // Write-then-rename so an interrupted run never leaves a truncated file.
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(file_digest(&bytes))
}

pub(crate) fn file_digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

pub fn read_weights(path: &Path) -> Result<BaseLearner, ModelError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |msg: String| ModelError::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a weight file".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(hlen))
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    if header.version != WEIGHTS_FORMAT_VERSION {
        return Err(bad(format!(
            "format version {} unsupported (expected {WEIGHTS_FORMAT_VERSION})",
            header.version
        )));
    }
    let mut data = &bytes[16 + hlen..];
    let mut entries = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        if data.len() < 8 * n {
            return Err(bad(format!("truncated data for `{}`", e.name)));
        }
        let values = data[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[8 * n..];
        entries.push((e.name, Tensor::new(e.shape, values)?));
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    let learner = BaseLearner::from_weights(header.index, header.variant, header.config, Weights::new(entries))?;
    if learner.checksum() != header.checksum {
        return Err(bad("checksum mismatch".into()));
    }
    Ok(learner)
}
