//! Single-file parameter checkpoints.
//!
//! Layout: one line of compact JSON manifest terminated by `\n`, followed by
//! every tensor as little-endian f64 in manifest order. Levels are stored
//! one after another, each as channel `w1, w2, gate_conv, gate_bias` then
//! spatial `embed_conv, gate_conv, gate_bias`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChannelAttnParams, ScoreScale, SpatialAttnParams, VaConfig, VaParams};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::tensor::{io as tio, Tensor};

pub const MODULE_NAME: &str = "volumetric-attention";

const TENSOR_NAMES: [&str; 7] = [
    "channel.w1",
    "channel.w2",
    "channel.gate_conv",
    "channel.gate_bias",
    "spatial.embed_conv",
    "spatial.gate_conv",
    "spatial.gate_bias",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub level: usize,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub module: String,
    #[serde(rename = "C")]
    pub channels: usize,
    pub r: usize,
    pub k: usize,
    #[serde(rename = "C_s")]
    pub spatial_channels: usize,
    #[serde(rename = "N_default")]
    pub n_default: usize,
    pub level_count: usize,
    #[serde(default)]
    pub score_scale: ScoreScale,
    pub tensors: Vec<TensorEntry>,
}

/// Independent attention parameters for every pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct VaCheckpoint {
    pub levels: Vec<VaParams>,
    pub n_default: usize,
}

impl VaCheckpoint {
    pub fn manifest(&self) -> Result<Manifest> {
        let first = self
            .levels
            .first()
            .ok_or_else(|| Error::Config("checkpoint has no levels".into()))?;
        let config = first.config;
        let mut tensors = Vec::new();
        for (level, p) in self.levels.iter().enumerate() {
            p.validate()?;
            if p.config != config {
                return Err(Error::Config(format!(
                    "level {level} config {:?} differs from level 0 {:?}",
                    p.config, config
                )));
            }
            for (name, t) in TENSOR_NAMES.iter().zip(p.tensors()) {
                tensors.push(TensorEntry {
                    level,
                    name: (*name).to_string(),
                    shape: t.shape().to_vec(),
                });
            }
        }
        Ok(Manifest {
            module: MODULE_NAME.into(),
            channels: config.channels,
            r: config.reduction,
            k: config.spatial_kernel,
            spatial_channels: config.spatial_channels,
            n_default: self.n_default,
            level_count: self.levels.len(),
            score_scale: config.score_scale,
            tensors,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = self.manifest()?;
        let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
        out.push(b'\n');
        for p in &self.levels {
            for t in p.tensors() {
                out.extend(tio::to_le_bytes(t));
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            offset: bytes.len(),
            detail: "missing manifest terminator".into(),
        })?;
        let head = &bytes[..split];
        let manifest: Manifest =
            serde_json::from_slice(head).map_err(|e| fsutil::json_error(path, head, &e))?;
        if manifest.module != MODULE_NAME {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: 0,
                detail: format!("checkpoint is for module {:?}", manifest.module),
            });
        }
        if manifest.tensors.len() != manifest.level_count * TENSOR_NAMES.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: 0,
                detail: format!(
                    "{} tensors listed for {} levels",
                    manifest.tensors.len(),
                    manifest.level_count
                ),
            });
        }
        let config = VaConfig {
            channels: manifest.channels,
            reduction: manifest.r,
            spatial_kernel: manifest.k,
            spatial_channels: manifest.spatial_channels,
            score_scale: manifest.score_scale,
        };
        let mut offset = split + 1;
        let mut loaded = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let end = offset + 8 * n;
            if end > bytes.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    offset: bytes.len(),
                    detail: format!("truncated data for level {} {}", entry.level, entry.name),
                });
            }
            loaded.push(tio::from_le_bytes(&entry.shape, &bytes[offset..end])?);
            offset = end;
        }
        if offset != bytes.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset,
                detail: format!("{} trailing bytes", bytes.len() - offset),
            });
        }
        let mut it = loaded.into_iter();
        let mut next = || it.next().expect("count checked");
        let mut levels = Vec::with_capacity(manifest.level_count);
        for _ in 0..manifest.level_count {
            let channel = ChannelAttnParams {
                w1: next(),
                w2: next(),
                gate_conv: next(),
                gate_bias: next(),
                reduction: config.reduction,
            };
            let spatial = SpatialAttnParams {
                embed_conv: next(),
                gate_conv: next(),
                gate_bias: next(),
            };
            let p = VaParams { config, channel, spatial };
            p.validate()?;
            levels.push(p);
        }
        Ok(Self {
            levels,
            n_default: manifest.n_default,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsutil::read(path)?, path)
    }
}

/// Flat view used by the optimizer and the tests.
pub fn all_tensors(levels: &[VaParams]) -> Vec<&Tensor> {
    levels.iter().flat_map(|p| p.tensors()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> VaCheckpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let config = VaConfig::new(32);
        VaCheckpoint {
            levels: (0..4).map(|_| VaParams::init(config, &mut rng).unwrap()).collect(),
            n_default: 9,
        }
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = VaCheckpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn manifest_fields() {
        let m = sample().manifest().unwrap();
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["module"], MODULE_NAME);
        assert_eq!(v["C"], 32);
        assert_eq!(v["r"], 16);
        assert_eq!(v["k"], 7);
        assert_eq!(v["C_s"], 1);
        assert_eq!(v["N_default"], 9);
        assert_eq!(v["level_count"], 4);
        assert_eq!(m.tensors.len(), 28);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let bytes = sample().to_bytes().unwrap();
        let err = VaCheckpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = VaCheckpoint::from_bytes(b"{not json\n", Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
