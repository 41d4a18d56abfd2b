use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use va_core::fsutil;
use va_core::volume::io::{read_volume, write_volume};
use va_core::volume::{
    clamp_normalize, rescale_volume_xy, resample_z, IntensitySpace, DEFAULT_HU_RANGE, DEFAULT_SIZE, DEFAULT_TARGET_DZ,
};

use crate::{echo_config, CmdResult, Failure};

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Input `.vol` file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// HU window as `lo,hi`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub clamp: Option<(f64, f64)>,
    /// Target slice spacing in mm.
    #[arg(long)]
    pub dz: Option<f64>,
    /// In-plane output size in pixels.
    #[arg(long)]
    pub size: Option<usize>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected lo,hi but got {s:?}"))?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    input: &'a Path,
    out: &'a Path,
    clamp: (f64, f64),
    dz: f64,
    size: usize,
}

#[derive(Serialize)]
struct SlabEntry {
    center_z: usize,
    /// Source slices of the three channels, boundary replicated.
    slices: [usize; 3],
}

#[derive(Serialize)]
struct SlabManifest {
    volume: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    slabs: Vec<SlabEntry>,
}

pub fn run(a: PreprocessArgs) -> CmdResult {
    let clamp = a.clamp.unwrap_or(DEFAULT_HU_RANGE);
    let dz = a.dz.unwrap_or(DEFAULT_TARGET_DZ);
    let size = a.size.unwrap_or(DEFAULT_SIZE);
    echo_config(
        "preprocess",
        &EffectiveConfig {
            input: &a.input,
            out: &a.out,
            clamp,
            dz,
            size,
        },
    );
    let v = read_volume(&a.input)?;
    // Unit-space input has been clamped already.
    let v = match v.intensity() {
        IntensitySpace::Hu => clamp_normalize(&v, clamp.0, clamp.1)?,
        IntensitySpace::Unit => v,
    };
    let v = resample_z(&v, dz)?;
    let v = rescale_volume_xy(&v, size)?;

    std::fs::create_dir_all(&a.out).map_err(|e| Failure::input(format!("cannot create {}: {e}", a.out.display())))?;
    let stem = a
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Failure::input(format!("input {} has no file name", a.input.display())))?;
    let vol_name = format!("{stem}.vol");
    write_volume(&a.out.join(&vol_name), &v)?;

    let nz = v.dims()[0];
    let manifest = SlabManifest {
        volume: vol_name,
        dims: v.dims(),
        spacing_mm: v.spacing(),
        slabs: (0..nz)
            .map(|z| SlabEntry {
                center_z: z,
                slices: [z.saturating_sub(1), z, (z + 1).min(nz - 1)],
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fsutil::write_atomic(&a.out.join(format!("{stem}.slabs.json")), json.as_bytes())?;
    println!("{}", a.out.join(format!("{stem}.vol")).display());
    Ok(())
}
