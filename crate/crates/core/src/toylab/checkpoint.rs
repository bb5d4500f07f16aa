//! Checkpoint container: `UTCK` magic, version, header length, a JSON header
//! (config, tensor manifest, digests) and then every parameter as a
//! little-endian `f64` in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{TensorInfo, ToyModel, ToyModelConfig};
use crate::error::{Error, Result};
use crate::seed::Digest256;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ToyModelConfig,
    pub manifest: Vec<TensorInfo>,
    pub param_count: usize,
    /// SHA-256 of the raw parameter bytes.
    pub param_digest: String,
    pub tensor_digests: Vec<String>,
    /// Free-form provenance (training stages, losses, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn tensor_digests(model: &ToyModel) -> Vec<String> {
    model
        .layout()
        .manifest()
        .iter()
        .map(|t| {
            let mut d = Digest256::new();
            d.update_f64s(&model.params[t.offset..t.offset + t.len()]);
            d.finish_hex()
        })
        .collect()
}

pub fn header_for(model: &ToyModel, meta: serde_json::Value) -> CheckpointHeader {
    CheckpointHeader {
        config: model.config().clone(),
        manifest: model.layout().manifest().to_vec(),
        param_count: model.num_params(),
        param_digest: model.param_digest(),
        tensor_digests: tensor_digests(model),
        meta,
    }
}

pub fn write_checkpoint(path: &Path, model: &ToyModel, meta: serde_json::Value) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let header = serde_json::to_vec(&header_for(model, meta)).map_err(|e| io(e.into()))?;
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for p in &model.params {
        w.write_all(&p.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<(ToyModel, CheckpointHeader)> {
    let src = path.display().to_string();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let fmt = |m: String| Error::format(&src, 0, m);
    let mut fixed = [0u8; 16];
    r.read_exact(&mut fixed).map_err(|e| fmt(format!("truncated header: {e}")))?;
    if &fixed[..4] != CHECKPOINT_MAGIC {
        return Err(fmt(format!("bad magic {:?}, expected UTCK", &fixed[..4])));
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fmt(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(fixed[8..16].try_into().unwrap()) as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes).map_err(|e| fmt(format!("truncated JSON header: {e}")))?;
    let header: CheckpointHeader = serde_json::from_slice(&hbytes).map_err(|e| fmt(format!("bad JSON header: {e}")))?;

    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.len() != header.param_count * 8 {
        return Err(fmt(format!(
            "expected {} parameter bytes, found {}",
            header.param_count * 8,
            raw.len()
        )));
    }
    let params: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let model = ToyModel::from_parts(header.config.clone(), params)?;
    if model.layout().manifest() != header.manifest.as_slice() {
        return Err(fmt("tensor manifest does not match the configured architecture".into()));
    }
    if model.param_digest() != header.param_digest {
        return Err(Error::Integrity(format!("{src}: parameter digest mismatch")));
    }
    Ok((model, header))
}
