use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Phantom, ToyModel};
use crate::error::{Error, Result};
use crate::metrics::{DetectionRecord, EvalCase, MetricsReport};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Target slices per gradient step. Blocks tile each volume along z.
    pub block: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 18,
            lr: 1.0,
            block: 32,
            seed: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Loss of every step, in order.
    pub loss_curve: Vec<f64>,
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric { op, context } => Error::Numeric {
            op,
            context: Some(match context {
                Some(c) => format!("epoch {epoch}, {c}"),
                None => format!("epoch {epoch}"),
            }),
        },
        other => other,
    }
}

/// Per-voxel binary cross-entropy on the centre slice of every slab, by
/// plain gradient descent with a fixed learning rate.
pub fn train_toy(model: &mut ToyModel, data: &[Phantom], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::contract("train_toy", "no training phantoms"));
    }
    if cfg.block == 0 {
        return Err(Error::Config("training block must hold at least one slice".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {} must be non-negative", cfg.lr)));
    }
    let mut batches = Vec::new();
    let mut targets = Vec::with_capacity(data.len());
    for (i, p) in data.iter().enumerate() {
        let [nz, ny, nx] = p.volume.dims();
        let lesion = p.lesion_mask();
        let planes: Vec<Tensor> = (0..nz)
            .map(|z| {
                let s = lesion.slice(z);
                Tensor::new([1, ny, nx], s.data().iter().map(|&b| b as u8 as f64).collect())
                    .expect("plane size")
            })
            .collect();
        targets.push(planes);
        let mut z = 0;
        while z < nz {
            batches.push((i, z..(z + cfg.block).min(nz)));
            z += cfg.block;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_curve = Vec::with_capacity(cfg.epochs * batches.len());
    for epoch in 0..cfg.epochs {
        let mut order = batches.clone();
        order.shuffle(&mut rng);
        for (i, range) in order {
            let mut step = || -> Result<f64> {
                let mut tape = Tape::new();
                let (logits, vars) = model.forward(&mut tape, &data[i].volume, range.clone(), true)?;
                let mut total = None;
                for (l, z) in logits.iter().zip(range.clone()) {
                    let bce = tape.bce_with_logits(*l, &targets[i][z])?;
                    total = Some(match total {
                        None => bce,
                        Some(t) => tape.add(t, bce)?,
                    });
                }
                let loss = tape.scale(total.expect("nonempty block"), 1.0 / range.len() as f64)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::numeric("train_toy loss"));
                }
                tape.backward(loss)?;
                for (p, v) in model.params_mut().into_iter().zip(vars) {
                    if let Some(g) = tape.grad(v) {
                        p.descend(g, cfg.lr);
                    }
                }
                Ok(value)
            };
            loss_curve.push(step().map_err(|e| with_epoch(e, epoch))?);
        }
    }
    Ok(TrainOutcome { loss_curve })
}

/// True when the mean loss over the last `window` steps is below the mean
/// over the first `window`.
pub fn loss_trend_decreasing(curve: &[f64], window: usize) -> bool {
    if window == 0 || curve.len() < 2 * window {
        return false;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    mean(&curve[curve.len() - window..]) < mean(&curve[..window])
}

/// Predicts every phantom and scores it against its lesion mask.
pub fn eval_toy(model: &ToyModel, phantoms: &[Phantom]) -> Result<(MetricsReport, Vec<DetectionRecord>)> {
    let cases = phantoms
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(EvalCase {
                name: format!("phantom{i}"),
                prob: model.predict(&p.volume)?,
                gt: p.lesion_mask(),
                spacing: p.volume.spacing(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::evaluate(&cases)
}
