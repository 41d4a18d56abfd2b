use std::collections::BTreeMap;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    apply_gates, channel_embed, channel_gate_from_embeddings, spatial_embed, spatial_gate_from_embeddings,
    AttentionMode, ScoreScale, VaConfig, VaParams, VaVars,
};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::volume::{make_bag_indices, stack_25d, BagSpec, Volume};

use super::derive_seed;

/// Feature channels of the backbone.
pub const WIDTH: usize = 16;
const KERNEL: usize = 3;
/// Initial lesion probability of the head, roughly the phantom lesion fraction.
const HEAD_PRIOR: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub mode: AttentionMode,
    pub bag_size: usize,
    /// Channel reduction of the attention embedding.
    pub reduction: usize,
    pub score_scale: ScoreScale,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            mode: AttentionMode::Both,
            bag_size: 9,
            reduction: 4,
            score_scale: ScoreScale::Dim,
        }
    }
}

/// Three 3×3 conv layers (3→16→16→16) with relu, optional volumetric
/// attention on the last feature map, and a 1×1 segmentation head.
///
/// Component scores come from the peak probability inside each predicted
/// region, so the scoring head has no weights of its own.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub config: ToyConfig,
    pub convs: [Tensor; 3],
    pub biases: [Tensor; 3],
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub va: Option<VaParams>,
}

struct Bound {
    convs: [Var; 3],
    biases: [Var; 3],
    head_w: Var,
    head_b: Var,
    va: Option<VaVars>,
}

/// Maps unit intensities to `[0, 2]`. The background stays at zero so
/// max-pooled features respond to bright structures.
pub(crate) fn input_transform(slab: Tensor) -> Tensor {
    slab.map(|v| 2.0 * v)
}

fn he_uniform(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let fan_in = shape[1] * shape[2] * shape[3];
    let a = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -a, a, rng)
}

impl ToyModel {
    /// Backbone and head weights come from `seed`; attention weights come
    /// from a separate stream of the same seed, so models that differ only
    /// in attention mode share their backbone initialisation.
    pub fn init(config: ToyConfig, seed: u64) -> Result<Self> {
        BagSpec::new(config.bag_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = [
            he_uniform([WIDTH, 3, KERNEL, KERNEL], &mut rng),
            he_uniform([WIDTH, WIDTH, KERNEL, KERNEL], &mut rng),
            he_uniform([WIDTH, WIDTH, KERNEL, KERNEL], &mut rng),
        ];
        let biases = [0, 1, 2].map(|_| Tensor::zeros([WIDTH, 1, 1]));
        let a = (6.0 / (WIDTH + 1) as f64).sqrt();
        let head_w = Tensor::uniform([1, WIDTH, 1, 1], -a, a, &mut rng);
        let head_b = Tensor::full([1, 1, 1], (HEAD_PRIOR / (1.0 - HEAD_PRIOR)).ln());
        let va = if config.mode == AttentionMode::None {
            None
        } else {
            let mut va_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7, 0));
            let vc = VaConfig {
                reduction: config.reduction,
                score_scale: config.score_scale,
                ..VaConfig::new(WIDTH)
            };
            Some(VaParams::init(vc, &mut va_rng)?)
        };
        Ok(Self {
            config,
            convs,
            biases,
            head_w,
            head_b,
            va,
        })
    }

    pub fn bag(&self) -> BagSpec {
        BagSpec::new(self.config.bag_size).expect("validated at init")
    }

    /// Every weight tensor in a fixed order: backbone, head, attention.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::new();
        for i in 0..3 {
            v.push(&self.convs[i]);
            v.push(&self.biases[i]);
        }
        v.push(&self.head_w);
        v.push(&self.head_b);
        if let Some(va) = &self.va {
            v.extend(va.tensors());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        for (c, b) in self.convs.iter_mut().zip(self.biases.iter_mut()) {
            v.push(c);
            v.push(b);
        }
        v.push(&mut self.head_w);
        v.push(&mut self.head_b);
        if let Some(va) = &mut self.va {
            v.extend(va.tensors_mut());
        }
        v
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let mut put = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        let convs = [put(&self.convs[0]), put(&self.convs[1]), put(&self.convs[2])];
        let biases = [put(&self.biases[0]), put(&self.biases[1]), put(&self.biases[2])];
        let head_w = put(&self.head_w);
        let head_b = put(&self.head_b);
        let va = self.va.as_ref().map(|p| p.bind(tape, trainable));
        Bound {
            convs,
            biases,
            head_w,
            head_b,
            va,
        }
    }

    fn backbone(tape: &mut Tape, b: &Bound, slab: Var) -> Result<Var> {
        let mut h = slab;
        for i in 0..3 {
            let c = tape.conv2d(h, b.convs[i], KERNEL / 2)?;
            let c = tape.add_broadcast(c, b.biases[i])?;
            h = tape.relu(c)?;
        }
        Ok(h)
    }

    /// Records the forward pass for target slices `targets` of `vol` and
    /// returns one `1×H×W` logit map per target plus the vars every weight
    /// tensor was bound to, in [`ToyModel::params`] order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vol: &Volume,
        targets: Range<usize>,
        trainable: bool,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let nz = vol.dims()[0];
        if targets.start >= targets.end || targets.end > nz {
            return Err(Error::contract(
                "ToyModel::forward",
                format!("target range {targets:?} outside 0..{nz}"),
            ));
        }
        let b = self.bind(tape, trainable);
        let mode = self.config.mode;
        let bag = self.bag();
        let windows: Vec<Vec<usize>> = targets
            .clone()
            .map(|z| if mode == AttentionMode::None { vec![z] } else { make_bag_indices(z, &bag, nz) })
            .collect();
        let mut features = BTreeMap::new();
        for &c in windows.iter().flatten() {
            if let std::collections::btree_map::Entry::Vacant(e) = features.entry(c) {
                let slab = tape.constant(input_transform(stack_25d(vol, c)?.channels));
                e.insert(Self::backbone(tape, &b, slab)?);
            }
        }
        let mut ch_embed = BTreeMap::new();
        let mut sp_embed = BTreeMap::new();
        if let Some(va) = &b.va {
            for (&c, &f) in &features {
                if mode.uses_channel() {
                    ch_embed.insert(c, channel_embed(tape, f, &va.channel)?);
                }
                if mode.uses_spatial() {
                    sp_embed.insert(c, spatial_embed(tape, f, &va.spatial)?);
                }
            }
        }
        let mut logits = Vec::with_capacity(windows.len());
        for (z, window) in targets.zip(&windows) {
            let mut refined = features[&z];
            if let Some(va) = &b.va {
                let cg = if mode.uses_channel() {
                    let members: Vec<Var> = window.iter().map(|c| ch_embed[c]).collect();
                    Some(channel_gate_from_embeddings(tape, ch_embed[&z], &members, &va.channel, va.score_scale)?.gate)
                } else {
                    None
                };
                let sg = if mode.uses_spatial() {
                    let members: Vec<Var> = window.iter().map(|c| sp_embed[c]).collect();
                    Some(spatial_gate_from_embeddings(tape, sp_embed[&z], &members, &va.spatial, va.score_scale)?.gate)
                } else {
                    None
                };
                refined = apply_gates(tape, refined, cg, sg)?;
            }
            let head = tape.conv2d(refined, b.head_w, 0)?;
            logits.push(tape.add_broadcast(head, b.head_b)?);
        }
        let mut vars = Vec::new();
        for i in 0..3 {
            vars.push(b.convs[i]);
            vars.push(b.biases[i]);
        }
        vars.push(b.head_w);
        vars.push(b.head_b);
        if let Some(va) = &b.va {
            vars.extend(va.vars());
        }
        Ok((logits, vars))
    }

    /// Lesion probability for every voxel of `vol`, z-major.
    pub fn predict(&self, vol: &Volume) -> Result<Vec<f64>> {
        let nz = vol.dims()[0];
        let mut tape = Tape::new();
        let (logits, _) = self.forward(&mut tape, vol, 0..nz, false)?;
        let mut out = Vec::with_capacity(vol.values().len());
        for l in logits {
            out.extend(tape.value(l).sigmoid().into_data());
        }
        Ok(out)
    }
}
