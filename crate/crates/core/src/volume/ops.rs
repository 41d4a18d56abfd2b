use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BagSpec, IntensitySpace, Slab25D, Volume};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Soft-tissue window in HU.
pub const DEFAULT_HU_RANGE: (f64, f64) = (-200.0, 300.0);
pub const DEFAULT_TARGET_DZ: f64 = 1.5;
/// In-plane size used at desk scale. Full-size runs use 1024.
pub const DEFAULT_SIZE: usize = 64;

// Guards the slice count against round-off when `(Z-1)·dz/target` is integral.
const COUNT_EPS: f64 = 1e-9;

/// Clips to `[lo, hi]` and maps the window affinely onto `[0, 1]`.
pub fn clamp_normalize(v: &Volume, lo: f64, hi: f64) -> Result<Volume> {
    if lo >= hi || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("clamp window [{lo}, {hi}] needs lo < hi")));
    }
    if v.intensity != IntensitySpace::Hu {
        return Err(Error::contract("clamp_normalize", "input is already in unit space"));
    }
    let width = hi - lo;
    let values = v
        .values
        .iter()
        .map(|&x| ((x.clamp(lo, hi) - lo) / width).clamp(0.0, 1.0))
        .collect();
    Ok(Volume {
        values,
        intensity: IntensitySpace::Unit,
        ..*v
    })
}

/// Linear interpolation along z onto spacing `target_dz`, starting at the
/// first slice.
pub fn resample_z(v: &Volume, target_dz: f64) -> Result<Volume> {
    if !(target_dz > 0.0 && target_dz.is_finite()) {
        return Err(Error::Config(format!("target dz {target_dz} must be positive")));
    }
    let [nz, ny, nx] = v.dims;
    if nz < 2 {
        return Err(Error::contract("resample_z", "cannot resample a single-slice volume"));
    }
    let dz = v.spacing[0];
    if dz == target_dz {
        return Ok(v.clone());
    }
    let extent = (nz - 1) as f64 * dz;
    let new_nz = (extent / target_dz + COUNT_EPS).floor() as usize + 1;
    let plane = ny * nx;
    let mut values = vec![0.0; new_nz * plane];
    values
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(k, out)| {
            let pos = (k as f64 * target_dz / dz).min((nz - 1) as f64);
            let i0 = (pos.floor() as usize).min(nz - 1);
            let t = pos - i0 as f64;
            let a = v.plane(i0);
            if t == 0.0 || i0 == nz - 1 {
                out.copy_from_slice(a);
            } else {
                let b = v.plane(i0 + 1);
                for ((o, &p), &q) in out.iter_mut().zip(a).zip(b) {
                    *o = p + t * (q - p);
                }
            }
        });
    Ok(Volume {
        dims: [new_nz, ny, nx],
        spacing: [target_dz, v.spacing[1], v.spacing[2]],
        values,
        intensity: v.intensity,
    })
}

fn source_coord(i: usize, n_in: usize, n_out: usize) -> (usize, f64) {
    let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
    let i0 = (pos.floor() as usize).min(n_in - 2);
    (i0, pos - i0 as f64)
}

/// Bilinear resample with corner pixels aligned.
pub fn rescale_xy(slice: &Tensor, target: usize) -> Result<Tensor> {
    if target < 2 {
        return Err(Error::Config(format!("rescale target {target} must be at least 2")));
    }
    let &[h, w] = slice.shape() else {
        return Err(Error::dim(
            "rescale_xy",
            format!("expected an H×W slice, got {:?}", slice.shape()),
        ));
    };
    if h < 2 || w < 2 {
        return Err(Error::contract(
            "rescale_xy",
            format!("degenerate {h}×{w} slice cannot be interpolated"),
        ));
    }
    if h == target && w == target {
        return Ok(slice.clone());
    }
    let src = slice.data();
    let cols: Vec<(usize, f64)> = (0..target).map(|j| source_coord(j, w, target)).collect();
    let mut out = Vec::with_capacity(target * target);
    for i in 0..target {
        let (y0, ty) = source_coord(i, h, target);
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[(y0 + 1) * w..(y0 + 2) * w];
        for &(x0, tx) in &cols {
            let top = r0[x0] + tx * (r0[x0 + 1] - r0[x0]);
            let bot = r1[x0] + tx * (r1[x0 + 1] - r1[x0]);
            out.push(top + ty * (bot - top));
        }
    }
    Tensor::new(vec![target, target], out)
}

/// Applies [`rescale_xy`] to every axial slice and adjusts in-plane spacing
/// so the physical field of view is unchanged.
pub fn rescale_volume_xy(v: &Volume, target: usize) -> Result<Volume> {
    let [nz, ny, nx] = v.dims;
    let planes: Vec<Tensor> = (0..nz)
        .into_par_iter()
        .map(|z| rescale_xy(&v.slice(z), target))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(nz * target * target);
    for p in planes {
        values.extend(p.into_data());
    }
    let scale = |n: usize, s: f64| if n == target { s } else { s * (n - 1) as f64 / (target - 1) as f64 };
    Ok(Volume {
        dims: [nz, target, target],
        spacing: [v.spacing[0], scale(ny, v.spacing[1]), scale(nx, v.spacing[2])],
        values,
        intensity: v.intensity,
    })
}

/// Slices `z-1, z, z+1` as a `3×H×W` tensor, replicating the end slices.
pub fn stack_25d(v: &Volume, z: usize) -> Result<Slab25D> {
    let [nz, ny, nx] = v.dims;
    if z >= nz {
        return Err(Error::contract("stack_25d", format!("z={z} outside 0..{nz}")));
    }
    let below = z.saturating_sub(1);
    let above = (z + 1).min(nz - 1);
    let mut data = Vec::with_capacity(3 * ny * nx);
    for s in [below, z, above] {
        data.extend_from_slice(v.plane(s));
    }
    Ok(Slab25D {
        channels: Tensor::new(vec![3, ny, nx], data)?,
        center_z: z,
    })
}

/// Slab centres of the bag around `z`, clamped into `[0, Z-1]`.
pub fn make_bag_indices(z: usize, spec: &BagSpec, nz: usize) -> Vec<usize> {
    let hi = nz.saturating_sub(1) as i64;
    spec.offsets()
        .into_iter()
        .map(|o| (z as i64 + o as i64).clamp(0, hi) as usize)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub clamp: (f64, f64),
    pub target_dz: f64,
    pub size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            clamp: DEFAULT_HU_RANGE,
            target_dz: DEFAULT_TARGET_DZ,
            size: DEFAULT_SIZE,
        }
    }
}

/// Clamp, resample along z, then rescale each slice.
pub fn preprocess(v: &Volume, cfg: &PreprocessConfig) -> Result<Volume> {
    let v = clamp_normalize(v, cfg.clamp.0, cfg.clamp.1)?;
    let v = resample_z(&v, cfg.target_dz)?;
    rescale_volume_xy(&v, cfg.size)
}
