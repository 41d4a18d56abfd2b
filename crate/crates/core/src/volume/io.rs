//! `.vol` and `.msk` files.
//!
//! A file is one line of JSON header, a `\n`, then the raw voxels in z-major
//! order with no padding:
//!
//! ```text
//! {"dims":[Z,Y,X],"spacing_mm":[dz,dy,dx],"dtype":"f32","intensity":"HU"}
//! <Z*Y*X little-endian f32>
//! ```
//!
//! Masks use `"dtype":"u8"` with labels 0 background, 1 liver, 2 lesion and
//! carry no `intensity` field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IntensitySpace, LabelVolume, Volume};
use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<IntensitySpace>,
}

fn parse_error(path: &Path, offset: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset,
        detail: detail.into(),
    }
}

fn split_header<'a>(path: &Path, bytes: &'a [u8], dtype: &str, width: usize) -> Result<(Header, &'a [u8])> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_error(path, bytes.len(), "header line is not terminated"))?;
    let head = &bytes[..end];
    let header: Header =
        serde_json::from_slice(head).map_err(|e| fsutil::json_error(path, head, &e))?;
    if header.dtype != dtype {
        return Err(parse_error(
            path,
            0,
            format!("dtype {:?}, expected {dtype:?}", header.dtype),
        ));
    }
    let body = &bytes[end + 1..];
    let want = header.dims.iter().product::<usize>() * width;
    if body.len() != want {
        return Err(parse_error(
            path,
            end + 1 + body.len().min(want),
            format!("payload is {} bytes, dims {:?} need {want}", body.len(), header.dims),
        ));
    }
    Ok((header, body))
}

fn with_header(header: &Header, body: impl IntoIterator<Item = u8>) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    out.extend(body);
    out
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let header = Header {
        dims: v.dims(),
        spacing_mm: v.spacing(),
        dtype: "f32".into(),
        intensity: Some(v.intensity()),
    };
    with_header(&header, v.values().iter().flat_map(|&x| (x as f32).to_le_bytes()))
}

pub fn decode_volume(bytes: &[u8], path: &Path) -> Result<Volume> {
    let (header, body) = split_header(path, bytes, "f32", 4)?;
    let intensity = header
        .intensity
        .ok_or_else(|| parse_error(path, 0, "volume header lacks an intensity field"))?;
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Volume::new(header.dims, header.spacing_mm, values, intensity)
}

pub fn encode_labels(m: &LabelVolume) -> Vec<u8> {
    let header = Header {
        dims: m.dims(),
        spacing_mm: m.spacing(),
        dtype: "u8".into(),
        intensity: None,
    };
    with_header(&header, m.labels().iter().copied())
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<LabelVolume> {
    let (header, body) = split_header(path, bytes, "u8", 1)?;
    LabelVolume::new(header.dims, header.spacing_mm, body.to_vec())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    decode_volume(&fsutil::read(path)?, path)
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    fsutil::write_atomic(path, &encode_volume(v))
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    decode_labels(&fsutil::read(path)?, path)
}

pub fn write_labels(path: &Path, m: &LabelVolume) -> Result<()> {
    fsutil::write_atomic(path, &encode_labels(m))
}
