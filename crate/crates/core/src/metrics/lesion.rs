use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{connected_components, dice, Connectivity, Mask};
use crate::error::{Error, Result};

/// Lesions below this diameter are small.
pub const SMALL_MM: f64 = 15.0;
/// Lesions above this diameter are large.
pub const LARGE_MM: f64 = 30.0;
/// Prediction voxels within this many voxels (Chebyshev) of a ground-truth
/// lesion are attributed to it.
pub const ATTRIBUTION_DILATION: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Lesion {
    pub voxels: Vec<usize>,
    pub diameter_mm: f64,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LesionSet {
    pub lesions: Vec<Lesion>,
    pub spacing: [f64; 3],
}

/// Equivalent-sphere diameter `2·(3V/4π)^(1/3)` of `voxels` voxels.
pub fn lesion_diameter(voxels: usize, spacing: [f64; 3]) -> Result<f64> {
    if voxels == 0 {
        return Err(Error::contract("lesion_diameter", "empty component"));
    }
    let volume = voxels as f64 * spacing[0] * spacing[1] * spacing[2];
    Ok(2.0 * (3.0 * volume / (4.0 * PI)).cbrt())
}

pub fn lesion_set(mask: &Mask, spacing: [f64; 3], conn: Connectivity) -> LesionSet {
    let cc = connected_components(mask, conn);
    let lesions = cc
        .members
        .into_iter()
        .map(|voxels| Lesion {
            diameter_mm: lesion_diameter(voxels.len(), spacing).expect("components are nonempty"),
            voxels,
            score: None,
        })
        .collect();
    LesionSet { lesions, spacing }
}

/// Cube dilation by `r` voxels in every direction.
pub fn dilate(mask: &Mask, r: usize) -> Mask {
    let [nz, ny, nx] = mask.dims();
    let mut cur = mask.clone();
    // Separable max filter: one pass per axis.
    for axis in 0..3 {
        let prev = cur.clone();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if prev.get(z, y, x) {
                        continue;
                    }
                    let c = [z, y, x];
                    let n = [nz, ny, nx][axis];
                    let lo = c[axis].saturating_sub(r);
                    let hi = (c[axis] + r).min(n - 1);
                    let hit = (lo..=hi).any(|k| {
                        let mut q = c;
                        q[axis] = k;
                        prev.get(q[0], q[1], q[2])
                    });
                    if hit {
                        cur.set(z, y, x, true);
                    }
                }
            }
        }
    }
    cur
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeStratum {
    Small,
    Medium,
    Large,
}

impl SizeStratum {
    pub fn of(diameter_mm: f64) -> Self {
        if diameter_mm < SMALL_MM {
            Self::Small
        } else if diameter_mm <= LARGE_MM {
            Self::Medium
        } else {
            Self::Large
        }
    }
}

/// Mean per-lesion Dice by size. `None` marks a stratum with no lesions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StratifiedDice {
    pub small: Option<f64>,
    pub medium: Option<f64>,
    pub large: Option<f64>,
}

/// Dice of every ground-truth lesion, with its size stratum.
///
/// Each lesion is compared with the prediction restricted to the lesion's
/// dilated neighbourhood, so a distant false positive does not lower the
/// score of every lesion.
pub fn per_lesion_dice(pred: &Mask, gt: &Mask, spacing: [f64; 3]) -> Result<Vec<(SizeStratum, f64)>> {
    if pred.dims() != gt.dims() {
        return Err(Error::dim(
            "stratified_dice",
            format!("{:?} vs {:?}", pred.dims(), gt.dims()),
        ));
    }
    let set = lesion_set(gt, spacing, Connectivity::TwentySix);
    let mut out = Vec::with_capacity(set.lesions.len());
    for lesion in &set.lesions {
        let g = Mask::from_indices(gt.dims(), &lesion.voxels);
        let region = dilate(&g, ATTRIBUTION_DILATION);
        let d = dice(&pred.and(&region)?, &g)?;
        out.push((SizeStratum::of(lesion.diameter_mm), d));
    }
    Ok(out)
}

impl StratifiedDice {
    pub fn from_lesions(scores: &[(SizeStratum, f64)]) -> Self {
        let mut sums = [(0.0, 0usize); 3];
        for &(s, d) in scores {
            sums[s as usize].0 += d;
            sums[s as usize].1 += 1;
        }
        let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        Self {
            small: mean(sums[0]),
            medium: mean(sums[1]),
            large: mean(sums[2]),
        }
    }
}

/// Per-lesion Dice averaged within size strata.
pub fn stratified_dice(pred: &Mask, gt: &Mask, spacing: [f64; 3]) -> Result<StratifiedDice> {
    Ok(StratifiedDice::from_lesions(&per_lesion_dice(pred, gt, spacing)?))
}
