use serde::{Deserialize, Serialize};

use super::{connected_components, Connectivity, Mask};
use crate::error::{Error, Result};

pub const IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_FPPI: [f64; 3] = [0.5, 1.0, 2.0];

/// Axis-aligned box `[y0, x0, y1, x1)` in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BBox {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        if !(min[0] <= max[0] && min[1] <= max[1]) {
            return Err(Error::contract("BBox::new", format!("min {min:?} exceeds max {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let h = (self.max[0].min(other.max[0]) - self.min[0].max(other.min[0])).max(0.0);
        let w = (self.max[1].min(other.max[1]) - self.min[1].max(other.min[1])).max(0.0);
        let inter = h * w;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Tight box around flat pixel indices of an `H×W` image.
    pub fn around(pixels: &[usize], width: usize) -> Option<Self> {
        let mut it = pixels.iter().map(|&i| ((i / width) as f64, (i % width) as f64));
        let (y, x) = it.next()?;
        let (mut lo, mut hi) = ([y, x], [y, x]);
        for (y, x) in it {
            lo = [lo[0].min(y), lo[1].min(x)];
            hi = [hi[0].max(y), hi[1].max(x)];
        }
        Some(Self {
            min: lo,
            max: [hi[0] + 1.0, hi[1] + 1.0],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(flatten)]
    pub bbox: BBox,
    pub score: f64,
}

/// One image: predicted boxes with scores and ground-truth boxes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    #[serde(default)]
    pub image: String,
    pub predictions: Vec<ScoredBox>,
    pub ground_truth: Vec<BBox>,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        for b in self.ground_truth.iter().chain(self.predictions.iter().map(|p| &p.bbox)) {
            BBox::new(b.min, b.max)?;
        }
        if let Some(p) = self.predictions.iter().find(|p| !(0.0..=1.0).contains(&p.score)) {
            return Err(Error::contract(
                "DetectionRecord",
                format!("score {} outside [0, 1] in image {:?}", p.score, self.image),
            ));
        }
        Ok(())
    }
}

fn score_order(preds: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    order
}

/// Greedy matching for one image. Predictions are visited by descending
/// score and each takes the unmatched ground-truth box of highest IoU, if
/// that IoU reaches `iou`. Returns, per prediction, whether it is a true
/// positive.
pub fn match_image(rec: &DetectionRecord, iou: f64) -> Vec<bool> {
    let mut taken = vec![false; rec.ground_truth.len()];
    let mut tp = vec![false; rec.predictions.len()];
    for p in score_order(&rec.predictions) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in rec.ground_truth.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = rec.predictions[p].bbox.iou(gt);
            if v >= iou && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[p] = true;
        }
    }
    tp
}

struct Ranked {
    score: f64,
    tp: bool,
}

fn ranked(records: &[DetectionRecord], iou: f64) -> Result<(Vec<Ranked>, usize)> {
    let mut all = Vec::new();
    let mut n_gt = 0;
    for rec in records {
        rec.validate()?;
        n_gt += rec.ground_truth.len();
        let tp = match_image(rec, iou);
        all.extend(rec.predictions.iter().zip(tp).map(|(p, tp)| Ranked { score: p.score, tp }));
    }
    // Stable: ties keep record then prediction order.
    all.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok((all, n_gt))
}

/// Operating points `(fps_per_image, sensitivity)` after each group of
/// tied scores, starting from the empty prediction set at `(0, 0)`.
pub fn froc_curve(records: &[DetectionRecord]) -> Result<Vec<(f64, f64)>> {
    if records.is_empty() {
        return Err(Error::contract("froc_sensitivity", "no detection records"));
    }
    let (all, n_gt) = ranked(records, IOU_THRESHOLD)?;
    if n_gt == 0 {
        return Err(Error::contract("froc_sensitivity", "no ground-truth boxes"));
    }
    let images = records.len() as f64;
    let mut curve = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    for (i, r) in all.iter().enumerate() {
        if r.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let group_end = all.get(i + 1).is_none_or(|n| n.score != r.score);
        if group_end {
            curve.push((fp as f64 / images, tp as f64 / n_gt as f64));
        }
    }
    Ok(curve)
}

/// Sensitivity at each FPs-per-image operating point.
///
/// For operating point `f`, every distinct score is a candidate threshold;
/// the reported value is the best sensitivity among thresholds whose false
/// positive count per image is at most `f`. Keeping nothing is always
/// admissible, so the result is 0 when even the top-scored group is too
/// noisy.
pub fn froc_sensitivity(records: &[DetectionRecord], fppi: &[f64]) -> Result<Vec<f64>> {
    let curve = froc_curve(records)?;
    Ok(fppi
        .iter()
        .map(|&f| {
            curve
                .iter()
                .filter(|(x, _)| *x <= f)
                .map(|&(_, s)| s)
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Average precision at IoU 0.5 with all-point interpolation.
pub fn ap50(records: &[DetectionRecord]) -> Result<f64> {
    let (all, n_gt) = ranked(records, IOU_THRESHOLD)?;
    if n_gt == 0 {
        return Err(Error::contract("ap50", "no ground-truth boxes"));
    }
    let mut recall = Vec::with_capacity(all.len());
    let mut precision = Vec::with_capacity(all.len());
    let mut tp = 0usize;
    for (i, r) in all.iter().enumerate() {
        tp += r.tp as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.into_iter().zip(precision) {
        ap += (r - prev) * p;
        prev = r;
    }
    Ok(ap)
}

/// Builds one record per axial slice from a lesion probability map and a
/// ground-truth mask. Predicted lesions are 8-connected regions with
/// probability at least `threshold`, scored by their peak probability.
pub fn records_from_slices(prob: &[f64], gt: &Mask, threshold: f64, name: &str) -> Result<Vec<DetectionRecord>> {
    let [nz, ny, nx] = gt.dims();
    let pred = Mask::threshold(gt.dims(), prob, threshold)?;
    let plane = ny * nx;
    let mut out = Vec::with_capacity(nz);
    for z in 0..nz {
        let p = prob[z * plane..(z + 1) * plane].iter();
        let pcc = connected_components(&pred.slice(z), Connectivity::TwentySix);
        let gcc = connected_components(&gt.slice(z), Connectivity::TwentySix);
        let probs: Vec<f64> = p.copied().collect();
        let predictions = pcc
            .members
            .iter()
            .map(|m| ScoredBox {
                bbox: BBox::around(m, nx).expect("nonempty"),
                score: m.iter().map(|&i| probs[i]).fold(0.0, f64::max).clamp(0.0, 1.0),
            })
            .collect();
        let ground_truth = gcc.members.iter().map(|m| BBox::around(m, nx).expect("nonempty")).collect();
        out.push(DetectionRecord {
            image: format!("{name}:{z}"),
            predictions,
            ground_truth,
        });
    }
    Ok(out)
}
