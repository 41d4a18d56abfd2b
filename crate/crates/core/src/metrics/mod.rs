//! Segmentation and detection metrics.
//!
//! Masks are z-major boolean grids. A 2D image is a mask with `Z = 1`.

mod components;
mod detection;
mod lesion;
mod report;

pub use components::{connected_components, Components, Connectivity};
pub use detection::{
    ap50, froc_curve, froc_sensitivity, match_image, records_from_slices, BBox, DetectionRecord, ScoredBox,
    DEFAULT_FPPI, IOU_THRESHOLD,
};
pub use lesion::{
    dilate, lesion_diameter, lesion_set, per_lesion_dice, stratified_dice, Lesion, LesionSet, SizeStratum,
    StratifiedDice, ATTRIBUTION_DILATION, LARGE_MM, SMALL_MM,
};
pub use report::{read_records, write_records, EvalCase, MetricsReport};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "Mask::new",
                format!("dims {dims:?} need {n} voxels, got {}", data.len()),
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![false; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self { dims, data }
    }

    /// Voxels at which `values >= threshold`.
    pub fn threshold(dims: [usize; 3], values: &[f64], threshold: f64) -> Result<Self> {
        Self::new(dims, values.iter().map(|&v| v >= threshold).collect())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.index(z, y, x)]
    }

    pub fn set(&mut self, z: usize, y: usize, x: usize, v: bool) {
        let i = self.index(z, y, x);
        self.data[i] = v;
    }

    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let plane = self.dims[1] * self.dims[2];
        (i / plane, (i % plane) / self.dims[2], i % self.dims[2])
    }

    /// Axial slice `z` as a single-slice mask.
    pub fn slice(&self, z: usize) -> Mask {
        let plane = self.dims[1] * self.dims[2];
        Mask {
            dims: [1, self.dims[1], self.dims[2]],
            data: self.data[z * plane..(z + 1) * plane].to_vec(),
        }
    }

    pub fn from_indices(dims: [usize; 3], indices: &[usize]) -> Self {
        let mut m = Self::empty(dims);
        for &i in indices {
            m.data[i] = true;
        }
        m
    }

    fn zip_with(&self, other: &Mask, op: &'static str, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        same_dims(op, self, other)?;
        Ok(Mask {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, "Mask::and", |a, b| a && b)
    }

    pub fn intersection_count(&self, other: &Mask) -> Result<usize> {
        same_dims("Mask::intersection_count", self, other)?;
        Ok(self.data.iter().zip(&other.data).filter(|(&a, &b)| a && b).count())
    }
}

fn same_dims(op: &'static str, a: &Mask, b: &Mask) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.dims, b.dims)));
    }
    Ok(())
}

/// `2|a ∩ b| / (|a| + |b|)`, and 1.0 when both masks are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Unweighted mean of per-volume Dice.
pub fn dice_per_case(preds: &[Mask], gts: &[Mask]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::contract(
            "dice_per_case",
            format!("{} predictions for {} ground-truth cases", preds.len(), gts.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::contract("dice_per_case", "no cases"));
    }
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        sum += dice(p, g)?;
    }
    Ok(sum / preds.len() as f64)
}

/// Keeps only lesion voxels that fall inside the liver.
pub fn mask_and_postprocess(liver: &Mask, lesion: &Mask) -> Result<Mask> {
    lesion.zip_with(liver, "mask_and_postprocess", |l, v| l && v)
}

#[cfg(test)]
mod tests;
