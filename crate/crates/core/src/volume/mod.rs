//! CT volumes and the preprocessing that turns them into 2.5D network input.
//!
//! Volumes are stored z-major (`values[(z * Y + y) * X + x]`) in f64. The
//! on-disk `.vol` / `.msk` formats are in [`io`].

pub mod io;
mod ops;

use serde::{Deserialize, Serialize};

pub use ops::{
    clamp_normalize, make_bag_indices, preprocess, rescale_volume_xy, rescale_xy, resample_z,
    stack_25d, PreprocessConfig, DEFAULT_HU_RANGE, DEFAULT_SIZE, DEFAULT_TARGET_DZ,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntensitySpace {
    #[serde(rename = "HU")]
    Hu,
    #[serde(rename = "unit")]
    Unit,
}

/// A scalar grid with physical spacing `(dz, dy, dx)` in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    values: Vec<f64>,
    intensity: IntensitySpace,
}

fn check_grid(op: &'static str, dims: [usize; 3], spacing: [f64; 3], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::contract(op, format!("empty dims {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::contract(op, format!("spacing {spacing:?} must be positive")));
    }
    let n = dims.iter().product::<usize>();
    if n != len {
        return Err(Error::dim(op, format!("dims {dims:?} need {n} voxels, got {len}")));
    }
    Ok(())
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        values: Vec<f64>,
        intensity: IntensitySpace,
    ) -> Result<Self> {
        check_grid("Volume::new", dims, spacing, values.len())?;
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::contract("Volume::new", format!("non-finite voxel {bad}")));
        }
        if intensity == IntensitySpace::Unit {
            if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::contract(
                    "Volume::new",
                    format!("unit-space voxel {bad} outside [0, 1]"),
                ));
            }
        }
        Ok(Self {
            dims,
            spacing,
            values,
            intensity,
        })
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        intensity: IntensitySpace,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let [nz, ny, nx] = dims;
        let mut values = Vec::with_capacity(nz * ny * nx);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    values.push(f(z, y, x));
                }
            }
        }
        Self::new(dims, spacing, values, intensity)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn intensity(&self) -> IntensitySpace {
        self.intensity
    }

    pub fn plane_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.values[(z * self.dims[1] + y) * self.dims[2] + x]
    }

    pub fn plane(&self, z: usize) -> &[f64] {
        let n = self.plane_len();
        &self.values[z * n..(z + 1) * n]
    }

    /// Axial slice `z` as an `H×W` tensor.
    pub fn slice(&self, z: usize) -> Tensor {
        Tensor::new(vec![self.dims[1], self.dims[2]], self.plane(z).to_vec())
            .expect("plane length matches")
    }
}

/// Per-voxel segmentation labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [u64; 3],
    labels: Vec<u8>,
}

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_LIVER: u8 = 1;
pub const LABEL_LESION: u8 = 2;

impl LabelVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], labels: Vec<u8>) -> Result<Self> {
        check_grid("LabelVolume::new", dims, spacing, labels.len())?;
        Ok(Self {
            dims,
            spacing: spacing.map(f64::to_bits),
            labels,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing.map(f64::from_bits)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Boolean mask of voxels carrying `label`.
    pub fn select(&self, label: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }
}

/// Three adjacent axial slices, ascending in z, around `center_z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Slab25D {
    pub channels: Tensor,
    pub center_z: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Replicate,
}

/// A symmetric window of `n_images` slab centres around a target slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagSpec {
    n_images: usize,
    #[serde(default)]
    boundary: Boundary,
}

impl BagSpec {
    pub fn new(n_images: usize) -> Result<Self> {
        if n_images == 0 || n_images.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "bag size must be odd and positive, got {n_images}"
            )));
        }
        Ok(Self {
            n_images,
            boundary: Boundary::Replicate,
        })
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    pub fn half(&self) -> usize {
        self.n_images / 2
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// `-(N-1)/2 ..= (N-1)/2`.
    pub fn offsets(&self) -> Vec<i32> {
        let h = self.half() as i32;
        (-h..=h).collect()
    }
}
