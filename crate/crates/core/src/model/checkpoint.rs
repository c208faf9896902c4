//! Versioned binary checkpoints: magic, JSON metadata, named `f64` tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Model, ModelConfig};
use super::tensor::Tensor;
use super::train::TrainConfig;
use crate::datagen::write_atomic;
use crate::error::{HelioError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset_hash: String,
    pub seed: u64,
}

pub fn checkpoint_bytes(model: &Model, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta).map_err(|e| HelioError::json("checkpoint metadata", e))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.names().iter().zip(&model.params) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| HelioError::Format("checkpoint truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(HelioError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(HelioError::Format(format!("checkpoint version {version} unsupported")));
    }
    let json_len = r.u32()?;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| HelioError::json("checkpoint metadata", e))?;
    let n = r.u32()?;
    let mut named = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| HelioError::Format("tensor name is not UTF-8".into()))?;
        let (rows, cols) = (r.u32()?, r.u32()?);
        let data = r
            .take(8 * rows * cols)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        named.push((name, Tensor { rows, cols, data }));
    }
    if r.pos != bytes.len() {
        return Err(HelioError::Format("trailing bytes after last tensor".into()));
    }
    Ok((Model::from_named(meta.model.clone(), named)?, meta))
}

pub fn save_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(model, meta)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| HelioError::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, domain};

    #[test]
    fn round_trip_is_exact() {
        let model = Model::new(ModelConfig::tiny(), &mut rng::stream(5, domain::INIT, 0)).unwrap();
        let meta = CheckpointMeta {
            model: ModelConfig::tiny(),
            train: TrainConfig::default(),
            dataset_hash: "abc".into(),
            seed: 5,
        };
        let bytes = checkpoint_bytes(&model, &meta).unwrap();
        let (m2, meta2) = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(m2.params, model.params);
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(checkpoint_from_bytes(&bad).is_err());
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let model = Model::new(ModelConfig::tiny(), &mut rng::stream(5, domain::INIT, 0)).unwrap();
        let mut other = ModelConfig::tiny();
        other.mlp_dim = 32;
        let meta = CheckpointMeta {
            model: other,
            train: TrainConfig::default(),
            dataset_hash: String::new(),
            seed: 0,
        };
        let bytes = checkpoint_bytes(&model, &meta).unwrap();
        assert!(checkpoint_from_bytes(&bytes).is_err());
    }
}
