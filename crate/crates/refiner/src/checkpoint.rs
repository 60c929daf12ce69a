//! Versioned weight container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON header
//! (config echo, parameter names and shapes, free-form metadata), then every
//! parameter as little-endian `f64` in header order.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{RefinerError, Result};
use crate::model::{Param, PyramidEncoder, Refiner, RefinerConfig};

pub const MAGIC: &[u8; 8] = b"PAUGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: RefinerConfig,
    params: Vec<Entry>,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn encode(model: &Refiner, meta: serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config().clone(),
        params: model
            .params()
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + model.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], encoder: Option<Arc<dyn PyramidEncoder>>) -> Result<(Refiner, serde_json::Value)> {
    let bad = |m: &str| RefinerError::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a refiner checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(RefinerError::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut offset = 20 + hlen;
    let mut params = Vec::with_capacity(header.params.len());
    for e in header.params {
        let n: usize = e.shape.iter().product();
        let raw = bytes
            .get(offset..offset + n * 8)
            .ok_or_else(|| RefinerError::Checkpoint(format!("truncated blob {}", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset += n * 8;
        params.push(Param {
            name: e.name,
            shape: e.shape,
            data,
        });
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    Ok((Refiner::from_params(header.config, params, encoder)?, header.meta))
}

/// Writes to a temporary file beside `path`, then renames it into place.
pub fn save(model: &Refiner, meta: serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(model, meta)?;
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let io = |source| RefinerError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>, encoder: Option<Arc<dyn PyramidEncoder>>) -> Result<(Refiner, serde_json::Value)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => RefinerError::WeightsMissing(path.display().to_string()),
        _ => RefinerError::Io {
            path: path.to_path_buf(),
            source,
        },
    })?;
    decode(&bytes, encoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GatingMode;

    #[test]
    fn round_trip() {
        let cfg = RefinerConfig {
            gating_mode: GatingMode::SpatialAttention,
            ..RefinerConfig::toy()
        };
        let model = Refiner::new(cfg, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ckpt");
        save(&model, serde_json::json!({"epoch": 3}), &p).unwrap();
        let (back, meta) = load(&p, None).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.config(), model.config());
        assert_eq!(meta["epoch"], 3);
    }

    #[test]
    fn rejects_damage() {
        let model = Refiner::new(RefinerConfig::toy(), 4).unwrap();
        let bytes = encode(&model, serde_json::Value::Null).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1], None).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode(&wrong, None).is_err());
        assert!(matches!(load("/nonexistent/w.ckpt", None), Err(RefinerError::WeightsMissing(_))));
    }
}
