use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use va_core::metrics::{write_records, EvalCase, Mask, MetricsReport};
use va_core::volume::io::{read_labels, read_volume};
use va_core::volume::{IntensitySpace, LABEL_LESION};

use crate::{echo_config, CmdResult, Failure};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Prediction file or directory: `.vol` lesion probabilities in unit
    /// space, or `.msk` label maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth `.msk` file or directory. Lesions carry label 2.
    #[arg(long)]
    pub gt: PathBuf,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-slice detection records as JSON lines.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    pred: &'a Path,
    gt: &'a Path,
    threshold: f64,
}

fn is_pred(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("vol" | "msk"))
}

fn is_gt(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()) == Some("msk")
}

/// Files of `dir` accepted by `keep`, keyed by file stem.
fn listing(dir: &Path, keep: fn(&Path) -> bool) -> Result<BTreeMap<String, PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::input(format!("cannot read {}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::input(format!("cannot read {}: {e}", dir.display())))?.path();
        if path.is_file() && keep(&path) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if let Some(prev) = out.insert(stem.clone(), path.clone()) {
                return Err(Failure::input(format!(
                    "{} and {} share the case name {stem:?}",
                    prev.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(out)
}

/// Pairs prediction and ground-truth files by case name.
fn pairs(pred: &Path, gt: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, Failure> {
    match (pred.is_dir(), gt.is_dir()) {
        (false, false) => {
            let name = pred.file_stem().and_then(|s| s.to_str()).unwrap_or("case").to_string();
            Ok(vec![(name, pred.to_path_buf(), gt.to_path_buf())])
        }
        (true, true) => {
            let p = listing(pred, is_pred)?;
            let g = listing(gt, is_gt)?;
            if p.is_empty() {
                return Err(Failure::input(format!("no predictions in {}", pred.display())));
            }
            let orphans: Vec<String> = p
                .iter()
                .filter(|(k, _)| !g.contains_key(*k))
                .chain(g.iter().filter(|(k, _)| !p.contains_key(*k)))
                .map(|(_, path)| path.display().to_string())
                .collect();
            if !orphans.is_empty() {
                return Err(Failure::input(format!("unpaired files: {}", orphans.join(", "))));
            }
            Ok(p.into_iter().map(|(k, path)| { let g = g[&k].clone(); (k, path, g) }).collect())
        }
        _ => Err(Failure::input("--pred and --gt must both be files or both be directories")),
    }
}

fn load_case(name: String, pred: &Path, gt: &Path) -> Result<EvalCase, Failure> {
    let labels = read_labels(gt)?;
    let gt_mask = Mask::new(labels.dims(), labels.select(LABEL_LESION))?;
    let (dims, prob) = if is_gt(pred) {
        let p = read_labels(pred)?;
        (p.dims(), p.labels().iter().map(|&l| if l == LABEL_LESION { 1.0 } else { 0.0 }).collect())
    } else {
        let v = read_volume(pred)?;
        if v.intensity() != IntensitySpace::Unit {
            return Err(Failure::input(format!("{}: predictions must be in unit intensity space", pred.display())));
        }
        (v.dims(), v.values().to_vec())
    };
    if dims != labels.dims() {
        return Err(Failure::input(format!(
            "{name}: prediction dims {dims:?} differ from ground truth {:?}",
            labels.dims()
        )));
    }
    Ok(EvalCase {
        name,
        prob,
        gt: gt_mask,
        spacing: labels.spacing(),
    })
}

pub fn run(a: EvalArgs) -> CmdResult {
    echo_config(
        "eval",
        &EffectiveConfig {
            pred: &a.pred,
            gt: &a.gt,
            threshold: 0.5,
        },
    );
    let cases = pairs(&a.pred, &a.gt)?
        .into_iter()
        .map(|(name, p, g)| load_case(name, &p, &g))
        .collect::<Result<Vec<_>, _>>()?;
    let (report, records) = MetricsReport::evaluate(&cases)?;
    if let Some(path) = &a.records {
        write_records(path, &records)?;
    }
    match &a.out {
        Some(path) => report.save(path)?,
        None => println!("{}", report.to_json()),
    }
    Ok(())
}
