use std::path::Path;

use crate::{AscnError, Result};

use super::config::ModelConfig;
use super::model::{build_model, Model};

pub const MODEL_MAGIC: &[u8; 4] = b"ASCN";
pub const MODEL_VERSION: u32 = 1;

/// FNV-1a, 64-bit.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Layout: magic, `u32` version, `u64` config length, config JSON, `u64`
/// parameter count, parameters as `f64`, then an FNV-1a checksum of all
/// preceding bytes. Integers and floats are little-endian.
pub fn model_to_bytes(model: &Model) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&model.config)?;
    let params = model.params.to_flat();
    let mut out = Vec::with_capacity(32 + config.len() + 8 * params.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            AscnError::CorruptModel(format!("truncated while reading {what}"))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(AscnError::CorruptModel("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != MODEL_VERSION {
        return Err(AscnError::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    if bytes.len() < 16 {
        return Err(AscnError::CorruptModel("truncated header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if fnv1a(body) != stored {
        return Err(AscnError::CorruptModel("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let len = r.u64("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len, "config")?)
        .map_err(|e| AscnError::CorruptModel(format!("bad config: {e}")))?;
    let count = r.u64("parameter count")? as usize;
    let raw = r.take(count.saturating_mul(8), "parameters")?;
    if r.pos != body.len() {
        return Err(AscnError::CorruptModel(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut model = build_model(&config).map_err(|e| AscnError::CorruptModel(e.to_string()))?;
    if params.len() != model.params.num_scalars() {
        return Err(AscnError::CorruptModel(format!(
            "{} parameters stored, the configuration needs {}",
            params.len(),
            model.params.num_scalars()
        )));
    }
    model.params.set_flat(&params)?;
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_bytes(model)?).map_err(|e| AscnError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| AscnError::io(path, e))?;
    model_from_bytes(&bytes)
}
