//! Raw tensor files: a little-endian IEEE-754 f64 buffer next to a JSON
//! sidecar `{"shape": [...], "dtype": "f64", "order": "row-major"}`.
//!
//! For `weights.bin` the sidecar is `weights.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub order: String,
}

impl Sidecar {
    pub fn for_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            order: "row-major".into(),
        }
    }
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn to_le_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn from_le_bytes(shape: &[usize], bytes: &[u8]) -> Result<Tensor> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::dim(
            "tensor::from_le_bytes",
            format!("{} bytes is not a whole number of f64 values", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn save(t: &Tensor, raw: &Path) -> Result<()> {
    let sidecar = serde_json::to_vec_pretty(&Sidecar::for_tensor(t)).expect("sidecar serializes");
    fsutil::write_atomic(raw, &to_le_bytes(t))?;
    fsutil::write_atomic(&sidecar_path(raw), &sidecar)
}

pub fn load(raw: &Path) -> Result<Tensor> {
    let side_path = sidecar_path(raw);
    let side_bytes = fsutil::read(&side_path)?;
    let sidecar: Sidecar = serde_json::from_slice(&side_bytes)
        .map_err(|e| fsutil::json_error(&side_path, &side_bytes, &e))?;
    if sidecar.dtype != "f64" || sidecar.order != "row-major" {
        return Err(Error::Parse {
            path: side_path,
            offset: 0,
            detail: format!(
                "unsupported layout dtype={} order={}",
                sidecar.dtype, sidecar.order
            ),
        });
    }
    from_le_bytes(&sidecar.shape, &fsutil::read(raw)?)
}
