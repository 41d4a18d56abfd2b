use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{derive_seed, eval_toy, gen_phantom, train_toy, PhantomConfig, ToyConfig, ToyModel, TrainConfig};
use crate::attention::AttentionMode;
use crate::error::{Error, Result};
use crate::metrics::{froc_curve, MetricsReport};

pub const SCHEMA: u32 = 1;

/// One paired-seed experiment cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub model: ToyConfig,
    pub phantom: PhantomConfig,
    pub train: TrainConfig,
    pub seeds: usize,
    pub base_seed: u64,
    pub train_phantoms: usize,
    pub eval_phantoms: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA,
            model: ToyConfig::default(),
            phantom: PhantomConfig::default(),
            train: TrainConfig::default(),
            seeds: 5,
            base_seed: 12,
            train_phantoms: 2,
            eval_phantoms: 2,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!("unsupported config schema {}", self.schema)));
        }
        if self.seeds == 0 || self.train_phantoms == 0 || self.eval_phantoms == 0 {
            return Err(Error::Config("seeds and phantom counts must be positive".into()));
        }
        self.phantom.validate()
    }

    /// Seed of run `i`. Runs with equal `base_seed` are paired across cells.
    pub fn run_seed(&self, i: usize) -> u64 {
        self.base_seed + i as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub report: MetricsReport,
    pub final_loss: f64,
    pub loss_curve: Vec<f64>,
    /// `(fps_per_image, sensitivity)` points; empty without ground truth.
    pub froc_curve: Vec<(f64, f64)>,
}

/// Medians over seeds. A stratum missing from every seed stays `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianSummary {
    pub dice_per_case: f64,
    pub dice_s: Option<f64>,
    pub dice_m: Option<f64>,
    pub dice_l: Option<f64>,
    pub froc: BTreeMap<String, f64>,
    pub ap50: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedResult>,
    pub median: MedianSummary,
}

/// Median of a non-empty sample; even counts average the middle pair.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn summarize(per_seed: &[SeedResult]) -> MedianSummary {
    let pick = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
        median(&per_seed.iter().filter_map(|s| f(&s.report)).collect::<Vec<_>>())
    };
    let mut froc = BTreeMap::new();
    for key in per_seed.iter().flat_map(|s| s.report.froc.keys()) {
        if !froc.contains_key(key) {
            let values: Vec<f64> = per_seed.iter().filter_map(|s| s.report.froc.get(key).copied()).collect();
            froc.insert(key.clone(), median(&values).expect("key came from a seed"));
        }
    }
    MedianSummary {
        dice_per_case: pick(&|r| Some(r.dice_per_case)).expect("at least one seed"),
        dice_s: pick(&|r| r.dice_s),
        dice_m: pick(&|r| r.dice_m),
        dice_l: pick(&|r| r.dice_l),
        froc,
        ap50: pick(&|r| r.ap50),
    }
}

/// Trains and evaluates one model per seed.
///
/// For run seed `s`, training phantoms, evaluation phantoms, weight
/// initialisation and batch order all derive from `s` alone, so cells that
/// differ only in attention mode or bag size see identical data.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut per_seed = Vec::with_capacity(cfg.seeds);
    for i in 0..cfg.seeds {
        let seed = cfg.run_seed(i);
        let make = |stream: u64, n: usize| {
            (0..n)
                .map(|j| {
                    gen_phantom(&PhantomConfig {
                        seed: derive_seed(seed, stream, j as u64),
                        ..cfg.phantom
                    })
                })
                .collect::<Result<Vec<_>>>()
        };
        let train = make(1, cfg.train_phantoms)?;
        let held_out = make(2, cfg.eval_phantoms)?;
        let mut model = ToyModel::init(cfg.model, derive_seed(seed, 3, 0))?;
        let tcfg = TrainConfig {
            seed: derive_seed(seed, 4, 0),
            ..cfg.train
        };
        let outcome = train_toy(&mut model, &train, &tcfg).map_err(|e| match e {
            Error::Numeric { op, context } => Error::Numeric {
                op,
                context: Some(format!("seed {seed}, {}", context.unwrap_or_default())),
            },
            other => other,
        })?;
        let (report, records) = eval_toy(&model, &held_out)?;
        let curve = if records.iter().any(|r| !r.ground_truth.is_empty()) { froc_curve(&records)? } else { Vec::new() };
        per_seed.push(SeedResult {
            seed,
            report,
            final_loss: outcome.loss_curve.last().copied().unwrap_or(f64::NAN),
            loss_curve: outcome.loss_curve,
            froc_curve: curve,
        });
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        median: summarize(&per_seed),
        per_seed,
    })
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per seed followed by a `median` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,dice_per_case,dice_s,dice_m,dice_l,froc_0.5,froc_1,froc_2,ap50,final_loss\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.per_seed {
            let r = &s.report;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.seed,
                r.dice_per_case,
                opt(r.dice_s),
                opt(r.dice_m),
                opt(r.dice_l),
                opt(r.froc.get("0.5").copied()),
                opt(r.froc.get("1").copied()),
                opt(r.froc.get("2").copied()),
                opt(r.ap50),
                s.final_loss
            );
        }
        let m = &self.median;
        let _ = writeln!(
            out,
            "median,{},{},{},{},{},{},{},{},",
            m.dice_per_case,
            opt(m.dice_s),
            opt(m.dice_m),
            opt(m.dice_l),
            opt(m.froc.get("0.5").copied()),
            opt(m.froc.get("1").copied()),
            opt(m.froc.get("2").copied()),
            opt(m.ap50)
        );
        out
    }

    /// Loss curves as long-form CSV: `seed,step,loss`.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("seed,step,loss\n");
        for s in &self.per_seed {
            for (i, l) in s.loss_curve.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", s.seed, i, l);
            }
        }
        out
    }

    /// FROC curves as long-form CSV: `seed,fps_per_image,sensitivity`.
    pub fn froc_csv(&self) -> String {
        let mut out = String::from("seed,fps_per_image,sensitivity\n");
        for s in &self.per_seed {
            for (f, sens) in &s.froc_curve {
                let _ = writeln!(out, "{},{},{}", s.seed, f, sens);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum AblationAxis {
    BagSize(Vec<usize>),
    AttentionMode(Vec<AttentionMode>),
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::BagSize(_) => "bag_size",
            Self::AttentionMode(_) => "attention_mode",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub median: MedianSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: String,
    pub rows: Vec<AblationRow>,
}

/// Re-runs `base` once per axis value with everything else fixed.
pub fn ablate(base: &ExperimentConfig, axis: &AblationAxis) -> Result<AblationTable> {
    let cells: Vec<(String, ExperimentConfig)> = match axis {
        AblationAxis::BagSize(sizes) => sizes
            .iter()
            .map(|&n| {
                let mut c = base.clone();
                c.model.bag_size = n;
                (n.to_string(), c)
            })
            .collect(),
        AblationAxis::AttentionMode(modes) => modes
            .iter()
            .map(|&m| {
                let mut c = base.clone();
                c.model.mode = m;
                (m.to_string(), c)
            })
            .collect(),
    };
    let mut rows = Vec::with_capacity(cells.len());
    for (value, cfg) in cells {
        rows.push(AblationRow {
            value,
            median: run_experiment(&cfg)?.median,
        });
    }
    Ok(AblationTable {
        axis: axis.name().into(),
        rows,
    })
}

impl AblationTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},dice_per_case,dice_s,dice_m,dice_l,froc_0.5,froc_1,froc_2,ap50\n", self.axis);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let m = &r.median;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.value,
                m.dice_per_case,
                opt(m.dice_s),
                opt(m.dice_m),
                opt(m.dice_l),
                opt(m.froc.get("0.5").copied()),
                opt(m.froc.get("1").copied()),
                opt(m.froc.get("2").copied()),
                opt(m.ap50)
            );
        }
        out
    }
}
