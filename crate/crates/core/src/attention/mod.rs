//! Volumetric attention: a target feature map is refined by gates learned
//! from a z-ordered bag of feature maps taken from neighbouring images.
//!
//! Both branches share one pattern. Every bag member and the target are
//! embedded with shared weights, the target embedding is scored against
//! each member by an inner product, a softmax over the bag turns the scores
//! into slice weights, and the weighted mean embedding passes through
//! relu, a 1×1 conv and a sigmoid to become the gate.
//!
//! - channel branch: embedding `w2 · relu(w1 · avgpool(x))`, gate `C×1×1`
//! - spatial branch: embedding `conv([max_c x, mean_c x])`, gate `1×H×W`
//!
//! Both gates read the original target features. [`va_forward`] applies
//! them in sequence, channel first.

mod bag;
pub mod checkpoint;
mod channel;
mod params;
mod spatial;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bag::{bag_features, FeatureBag, TargetFeature};
pub use channel::{channel_attention, channel_embed, channel_gate_from_embeddings, ChannelGate};
pub use params::{
    ChannelAttnParams, ChannelAttnVars, ScoreScale, SpatialAttnParams, SpatialAttnVars, VaConfig, VaParams,
    DEFAULT_BAG_SIZE, DEFAULT_REDUCTION, DEFAULT_SPATIAL_CHANNELS, DEFAULT_SPATIAL_KERNEL,
};
pub use spatial::{spatial_attention, spatial_embed, spatial_gate_from_embeddings, SpatialGate};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Which gates [`va_forward`] applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// No attention; the target passes through unchanged.
    None,
    Channel,
    Spatial,
    Both,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 4] = [Self::None, Self::Channel, Self::Spatial, Self::Both];

    pub fn uses_channel(self) -> bool {
        matches!(self, Self::Channel | Self::Both)
    }

    pub fn uses_spatial(self) -> bool {
        matches!(self, Self::Spatial | Self::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Channel => "channel",
            Self::Spatial => "spatial",
            Self::Both => "both",
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown attention mode {s:?}")))
    }
}

/// Parameters of one level bound onto a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VaVars {
    pub channel: ChannelAttnVars,
    pub spatial: SpatialAttnVars,
    pub score_scale: ScoreScale,
}

impl VaParams {
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> VaVars {
        VaVars {
            channel: self.channel.bind(tape, trainable),
            spatial: self.spatial.bind(tape, trainable),
            score_scale: self.config.score_scale,
        }
    }
}

impl VaVars {
    /// Same order as [`VaParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.channel.vars().into();
        v.extend(self.spatial.vars());
        v
    }
}

/// Slice weights and gates produced by one [`va_forward`] call. Entries for
/// a branch the mode skipped are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttnWeights {
    /// `1×N`.
    pub channel_slices: Option<Var>,
    /// `1×N`.
    pub spatial_slices: Option<Var>,
    /// `C×1×1`.
    pub channel_gate: Option<Var>,
    /// `1×H×W`.
    pub spatial_gate: Option<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VaOutput {
    /// Refined `C×H×W` target features.
    pub out: Var,
    pub weights: AttnWeights,
}

/// Applies precomputed gates to the target: `x ⊙ S_c`, then `⊙ S_s`.
pub fn apply_gates(tape: &mut Tape, x: Var, channel_gate: Option<Var>, spatial_gate: Option<Var>) -> Result<Var> {
    let mut out = x;
    if let Some(g) = channel_gate {
        out = tape.mul_broadcast(out, g)?;
    }
    if let Some(g) = spatial_gate {
        out = tape.mul_broadcast(out, g)?;
    }
    Ok(out)
}

/// Full volumetric attention on one pyramid level.
pub fn va_forward(
    tape: &mut Tape,
    tgt: &TargetFeature,
    bag: &FeatureBag,
    params: &VaVars,
    mode: AttentionMode,
) -> Result<VaOutput> {
    check_target(tape, tgt, bag, "va_forward")?;
    let mut weights = AttnWeights::default();
    if mode.uses_channel() {
        let g = channel_attention(tape, tgt, bag, &params.channel, params.score_scale)?;
        weights.channel_gate = Some(g.gate);
        weights.channel_slices = Some(g.slices);
    }
    if mode.uses_spatial() {
        let g = spatial_attention(tape, tgt, bag, &params.spatial, params.score_scale)?;
        weights.spatial_gate = Some(g.gate);
        weights.spatial_slices = Some(g.slices);
    }
    let out = apply_gates(tape, tgt.map, weights.channel_gate, weights.spatial_gate)?;
    Ok(VaOutput { out, weights })
}

/// Softmax slice weights of `target` against `members` and the weighted
/// mean of the members. All inputs are flat vectors of equal length.
fn slice_attention(tape: &mut Tape, target: Var, members: &[Var], score_scale: ScoreScale) -> Result<(Var, Var)> {
    let d = tape.shape(target)[0];
    let stacked = tape.stack(members)?;
    let row = tape.reshape(target, [1, d])?;
    let columns = tape.transpose(stacked)?;
    let mut scores = tape.matmul(row, columns)?;
    if score_scale != ScoreScale::None {
        scores = tape.scale(scores, score_scale.factor(d))?;
    }
    let slices = tape.softmax(scores)?;
    let aggregated = tape.matmul(slices, stacked)?;
    let aggregated = tape.reshape(aggregated, [d])?;
    Ok((slices, aggregated))
}

fn check_target(tape: &Tape, tgt: &TargetFeature, bag: &FeatureBag, op: &'static str) -> Result<()> {
    if tape.shape(tgt.map) != bag.member_shape() {
        return Err(Error::dim(
            op,
            format!(
                "target {:?} does not match bag members {:?}",
                tape.shape(tgt.map),
                bag.member_shape()
            ),
        ));
    }
    Ok(())
}
