//! Synthetic liver phantoms and a toy 2.5D segmenter.
//!
//! A phantom holds bright elliptic-cylinder blobs inside a liver region.
//! Lesions persist over many slices; distractors have the same cross
//! section and intensity but last only `distractor_span` slices. A 3-slice
//! slab through a distractor can look exactly like a slab through a lesion,
//! so telling them apart needs context from further along z.

mod experiment;
mod model;
mod train;

pub use experiment::{
    ablate, median, run_experiment, AblationAxis, AblationRow, AblationTable, ExperimentConfig,
    ExperimentReport, MedianSummary, SeedResult, SCHEMA,
};
pub use model::{ToyConfig, ToyModel, WIDTH};
pub use train::{eval_toy, loss_trend_decreasing, train_toy, TrainConfig, TrainOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Mask;
use crate::volume::{IntensitySpace, LabelVolume, Volume, LABEL_BACKGROUND, LABEL_LESION, LABEL_LIVER};

pub const BACKGROUND_LEVEL: f64 = 0.02;
pub const LIVER_LEVEL: f64 = 0.12;
pub const BLOB_LEVEL: f64 = 0.8;

/// Gap kept between blobs, in pixels in-plane and slices along z.
const MARGIN_XY: f64 = 2.0;
const MARGIN_Z: usize = 2;
const PLACEMENT_TRIES: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// `(Z, Y, X)`.
    pub grid: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub n_lesions: usize,
    /// In-plane semi-axis range of every blob.
    pub lesion_radius_mm: (f64, f64),
    /// Inclusive range of lesion lengths in slices.
    pub lesion_span: (usize, usize),
    /// Expected distractors per slice.
    pub distractor_rate: f64,
    pub distractor_span: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            grid: [32, 64, 64],
            spacing_mm: [1.5, 1.0, 1.0],
            n_lesions: 3,
            lesion_radius_mm: (3.0, 6.0),
            lesion_span: (7, 12),
            distractor_rate: 0.15,
            distractor_span: 3,
            noise_sigma: 0.03,
            seed: 12,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grid.contains(&0) {
            return bad(format!("grid {:?} has an empty axis", self.grid));
        }
        if self.spacing_mm.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return bad(format!("spacing {:?} must be positive", self.spacing_mm));
        }
        let (lo, hi) = self.lesion_radius_mm;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("lesion radius range ({lo}, {hi}) must be positive and ordered"));
        }
        let (s0, s1) = self.lesion_span;
        if s0 == 0 || s0 > s1 {
            return bad(format!("lesion span range ({s0}, {s1}) must be positive and ordered"));
        }
        if !(self.distractor_rate >= 0.0 && self.distractor_rate.is_finite()) {
            return bad(format!("distractor rate {} must be non-negative", self.distractor_rate));
        }
        if self.distractor_span == 0 || self.distractor_span >= s0 {
            return bad(format!(
                "distractor span {} must be positive and shorter than lesions ({s0})",
                self.distractor_span
            ));
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return bad(format!("noise sigma {} must be non-negative", self.noise_sigma));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// Centre `(y, x)` in pixels.
    pub center: [f64; 2],
    /// Semi-axes `(ry, rx)` in pixels.
    pub radii: [f64; 2],
    /// First slice and slice count.
    pub z0: usize,
    pub span: usize,
}

impl Blob {
    pub fn covers(&self, z: usize, y: usize, x: usize) -> bool {
        if z < self.z0 || z >= self.z0 + self.span {
            return false;
        }
        let dy = (y as f64 - self.center[0]) / self.radii[0];
        let dx = (x as f64 - self.center[1]) / self.radii[1];
        dy * dy + dx * dx <= 1.0
    }

    fn clashes(&self, other: &Blob) -> bool {
        let z_gap_ok = self.z0 >= other.z0 + other.span + MARGIN_Z || other.z0 >= self.z0 + self.span + MARGIN_Z;
        if z_gap_ok {
            return false;
        }
        let reach = self.radii[0].max(self.radii[1]) + other.radii[0].max(other.radii[1]) + MARGIN_XY;
        let d = ((self.center[0] - other.center[0]).powi(2) + (self.center[1] - other.center[1]).powi(2)).sqrt();
        d < reach
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub volume: Volume,
    pub labels: LabelVolume,
    pub lesions: Vec<Blob>,
    pub distractors: Vec<Blob>,
}

impl Phantom {
    pub fn lesion_mask(&self) -> Mask {
        Mask::new(self.labels.dims(), self.labels.select(LABEL_LESION)).expect("dims match")
    }
}

/// Liver region: an elliptic cylinder through every slice.
fn liver_axes(ny: usize, nx: usize) -> ([f64; 2], [f64; 2]) {
    let c = [(ny as f64 - 1.0) / 2.0, (nx as f64 - 1.0) / 2.0];
    (c, [ny as f64 * 0.42, nx as f64 * 0.44])
}

fn in_liver(y: f64, x: f64, ny: usize, nx: usize, shrink: f64) -> bool {
    let (c, a) = liver_axes(ny, nx);
    let (ay, ax) = (a[0] - shrink, a[1] - shrink);
    if ay <= 0.0 || ax <= 0.0 {
        return false;
    }
    let dy = (y - c[0]) / ay;
    let dx = (x - c[1]) / ax;
    dy * dy + dx * dx <= 1.0
}

fn place(
    rng: &mut ChaCha8Rng,
    cfg: &PhantomConfig,
    span: usize,
    taken: &[Blob],
) -> Option<Blob> {
    let [nz, ny, nx] = cfg.grid;
    if span > nz {
        return None;
    }
    let (lo, hi) = cfg.lesion_radius_mm;
    for _ in 0..PLACEMENT_TRIES {
        let radii = [
            rng.random_range(lo..=hi) / cfg.spacing_mm[1],
            rng.random_range(lo..=hi) / cfg.spacing_mm[2],
        ];
        let center = [rng.random_range(0.0..ny as f64), rng.random_range(0.0..nx as f64)];
        let z0 = rng.random_range(0..=nz - span);
        let blob = Blob { center, radii, z0, span };
        let r = radii[0].max(radii[1]);
        if in_liver(center[0], center[1], ny, nx, r) && !taken.iter().any(|t| t.clashes(&blob)) {
            return Some(blob);
        }
    }
    None
}

/// Renders a phantom. A pure function of `cfg`.
pub fn gen_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let [nz, ny, nx] = cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut blobs = Vec::new();
    for i in 0..cfg.n_lesions {
        let span = rng.random_range(cfg.lesion_span.0..=cfg.lesion_span.1);
        let b = place(&mut rng, cfg, span, &blobs).ok_or_else(|| {
            Error::Config(format!(
                "lesion {i} of {} does not fit a {:?} grid",
                cfg.n_lesions, cfg.grid
            ))
        })?;
        blobs.push(b);
    }
    let lambda = cfg.distractor_rate * nz as f64;
    let n_distractors = if lambda > 0.0 {
        Poisson::new(lambda)
            .map_err(|e| Error::Config(format!("distractor rate: {e}")))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let mut distractors = Vec::with_capacity(n_distractors);
    for i in 0..n_distractors {
        let b = place(&mut rng, cfg, cfg.distractor_span, &blobs).ok_or_else(|| {
            Error::Config(format!(
                "distractor {i} of {n_distractors} does not fit a {:?} grid",
                cfg.grid
            ))
        })?;
        blobs.push(b);
        distractors.push(b);
    }
    let lesions = blobs[..cfg.n_lesions].to_vec();

    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma is valid");
    let mut values = Vec::with_capacity(nz * ny * nx);
    let mut labels = Vec::with_capacity(nz * ny * nx);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let liver = in_liver(y as f64, x as f64, ny, nx, 0.0);
                let lesion = lesions.iter().any(|b| b.covers(z, y, x));
                let blob = lesion || distractors.iter().any(|b| b.covers(z, y, x));
                let base = if blob {
                    BLOB_LEVEL
                } else if liver {
                    LIVER_LEVEL
                } else {
                    BACKGROUND_LEVEL
                };
                let n = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                values.push((base + n).clamp(0.0, 1.0));
                labels.push(if lesion {
                    LABEL_LESION
                } else if liver || blob {
                    LABEL_LIVER
                } else {
                    LABEL_BACKGROUND
                });
            }
        }
    }
    Ok(Phantom {
        volume: Volume::new(cfg.grid, cfg.spacing_mm, values, IntensitySpace::Unit)?,
        labels: LabelVolume::new(cfg.grid, cfg.spacing_mm, labels)?,
        lesions,
        distractors,
    })
}

/// Mixes a seed with a stream and index into an independent 64-bit seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests;
