use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ap50, dice, froc_sensitivity, per_lesion_dice, records_from_slices, DetectionRecord, Mask,
    StratifiedDice, DEFAULT_FPPI,
};
use crate::error::{Error, Result};
use crate::fsutil;

/// One evaluated volume: a lesion probability map (a binary prediction is a
/// map of 0s and 1s) against its ground-truth lesion mask.
#[derive(Clone, Debug)]
pub struct EvalCase {
    pub name: String,
    pub prob: Vec<f64>,
    pub gt: Mask,
    pub spacing: [f64; 3],
}

/// Summary written as the metrics JSON. Absent strata and undefined
/// detection metrics (no ground-truth lesions) serialize as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice_per_case: f64,
    pub dice_s: Option<f64>,
    pub dice_m: Option<f64>,
    pub dice_l: Option<f64>,
    pub froc: BTreeMap<String, f64>,
    pub ap50: Option<f64>,
}

pub fn fppi_key(f: f64) -> String {
    format!("{f}")
}

impl MetricsReport {
    /// Thresholds every probability map at 0.5. Lesion Dice strata pool all
    /// lesions over all cases; detection metrics pool every axial slice.
    pub fn evaluate(cases: &[EvalCase]) -> Result<(Self, Vec<DetectionRecord>)> {
        if cases.is_empty() {
            return Err(Error::contract("MetricsReport::evaluate", "no cases"));
        }
        let mut dice_sum = 0.0;
        let mut lesions = Vec::new();
        let mut records = Vec::new();
        for case in cases {
            let pred = Mask::threshold(case.gt.dims(), &case.prob, 0.5)?;
            dice_sum += dice(&pred, &case.gt)?;
            lesions.extend(per_lesion_dice(&pred, &case.gt, case.spacing)?);
            records.extend(records_from_slices(&case.prob, &case.gt, 0.5, &case.name)?);
        }
        let strata = StratifiedDice::from_lesions(&lesions);
        let has_gt = records.iter().any(|r| !r.ground_truth.is_empty());
        let froc = if has_gt {
            let sens = froc_sensitivity(&records, &DEFAULT_FPPI)?;
            DEFAULT_FPPI.iter().map(|&f| fppi_key(f)).zip(sens).collect()
        } else {
            BTreeMap::new()
        };
        let ap = if has_gt { Some(ap50(&records)?) } else { None };
        Ok((
            Self {
                dice_per_case: dice_sum / cases.len() as f64,
                dice_s: strata.small,
                dice_m: strata.medium,
                dice_l: strata.large,
                froc,
                ap50: ap,
            },
            records,
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json();
        s.push('\n');
        fsutil::write_atomic(path, s.as_bytes())
    }
}

/// Detection records as JSON lines, one image per line.
pub fn write_records(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    fsutil::write_atomic(path, out.as_bytes())
}

pub fn read_records(path: &Path) -> Result<Vec<DetectionRecord>> {
    let bytes = fsutil::read(path)?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in bytes.split(|&b| b == b'\n') {
        if !line.iter().all(u8::is_ascii_whitespace) {
            let rec: DetectionRecord = serde_json::from_slice(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                offset: offset + e.column().saturating_sub(1),
                detail: e.to_string(),
            })?;
            out.push(rec);
        }
        offset += line.len() + 1;
    }
    Ok(out)
}
