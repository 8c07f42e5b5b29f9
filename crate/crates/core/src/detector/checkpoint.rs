//! Binary checkpoint: magic, version, architecture JSON, its hash, then
//! little-endian f64 parameters.

use std::fs;
use std::path::Path;

use super::model::{hex_digest, DetectorConfig, DetectorModel};
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"TRDETCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<T: Real>(model: &DetectorModel<T>, path: &Path) -> Result<()> {
    let json = serde_json::to_vec(model.config())?;
    let params = model.params();
    let mut buf = Vec::with_capacity(64 + json.len() + params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(hex_digest(&json).as_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<DetectorModel<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::format(path, msg);
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated checkpoint"))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(bad("not a detector checkpoint"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let json_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let json = take(json_len)?.to_vec();
    let hash = take(64)?;
    if hash != hex_digest(&json).as_bytes() {
        return Err(bad("architecture hash mismatch"));
    }
    let config: DetectorConfig = serde_json::from_slice(&json).map_err(|e| bad(&e.to_string()))?;
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    if n != config.param_count() {
        return Err(bad("parameter count does not match architecture"));
    }
    let raw = take(n * 8)?;
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DetectorModel::from_params(config, &params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.bin");
        let m = DetectorModel::<f32>::new(DetectorConfig::default(), 1).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let back: DetectorModel<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.weights_hash(), back.weights_hash());
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.bin");
        let m = DetectorModel::<f32>::new(DetectorConfig::default(), 1).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[20] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(load_checkpoint::<f32>(&path).is_err());
    }
}
