//! Binary checkpoint format.
//!
//! ```text
//! "FCRC" | u32 version | u32 n_x | u32 n_tx | u32 n_t | [u8; 32] sha256(config json)
//! u32 config length | config json
//! u64 tensor count | per tensor: u32 rows | u32 cols | f64 LE data
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{FcrError, Result};
use crate::model::{FcrModel, ModelConfig};

const MAGIC: &[u8; 4] = b"FCRC";
const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &FcrModel) -> Vec<u8> {
    let cfg = serde_json::to_vec(&model.config).expect("config serializes");
    let d = model.config.dims;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [d.n_x, d.n_tx, d.n_t] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&Sha256::digest(&cfg));
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let values = model.store.values();
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for t in values {
        out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(model: &FcrModel, path: &Path) -> Result<()> {
    crate::io::atomic_write(path, &encode_checkpoint(model))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(FcrError::Format {
                path: self.path.to_path_buf(),
                message: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fail(&self, message: impl Into<String>) -> FcrError {
        FcrError::Format {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<FcrModel> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.fail("not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let digest = r.take(32)?.to_vec();
    let len = r.u32()? as usize;
    let cfg_bytes = r.take(len)?;
    if Sha256::digest(cfg_bytes).as_slice() != digest.as_slice() {
        return Err(r.fail("configuration hash mismatch"));
    }
    let config: ModelConfig =
        serde_json::from_slice(cfg_bytes).map_err(|e| r.fail(format!("bad configuration: {e}")))?;
    let d = config.dims;
    if dims != [d.n_x as u32, d.n_tx as u32, d.n_t as u32] {
        return Err(r.fail("header dimensions disagree with the configuration"));
    }
    let mut model = FcrModel::new(config)?;
    let count = r.u64()?;
    if count != model.store.len() as u64 {
        return Err(r.fail(format!(
            "expected {} tensors, found {count}",
            model.store.len()
        )));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let target = model.store.get_mut(id);
        if target.dim() != (rows, cols) {
            return Err(r.fail(format!(
                "tensor shape {rows}x{cols} does not match {:?}",
                target.dim()
            )));
        }
        let data = r.take(rows * cols * 8)?;
        for (slot, chunk) in target.iter_mut().zip(data.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes after the last tensor"));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<FcrModel> {
    let bytes = fs::read(path).map_err(|e| FcrError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Loads and also requires the stored configuration to equal `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<FcrModel> {
    let model = load_checkpoint(path)?;
    if model.config != *expected {
        return Err(FcrError::Incompatible(format!(
            "checkpoint configuration {} differs from the requested {}",
            model.config.hash(),
            expected.hash()
        )));
    }
    Ok(model)
}
