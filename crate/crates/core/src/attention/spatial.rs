use super::bag::{FeatureBag, TargetFeature};
use super::params::{ScoreScale, SpatialAttnVars};
use super::slice_attention;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Output of the spatial branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpatialGate {
    /// `1×H×W`, entries in (0, 1).
    pub gate: Var,
    /// `1×N` softmax weights over bag members.
    pub slices: Var,
}

/// Learned convolution over the `[max, mean]` channel-pooled planes,
/// giving a `C_s×H×W` embedding.
pub fn spatial_embed(tape: &mut Tape, x: Var, p: &SpatialAttnVars) -> Result<Var> {
    let pooled = tape.channel_pool(x)?;
    tape.conv2d(pooled, p.embed_conv, p.pad)
}

/// Spatial gate from precomputed `C_s×H×W` embeddings. Scores are full
/// inner products of the flattened embeddings.
pub fn spatial_gate_from_embeddings(
    tape: &mut Tape,
    target: Var,
    members: &[Var],
    p: &SpatialAttnVars,
    score_scale: ScoreScale,
) -> Result<SpatialGate> {
    if members.is_empty() {
        return Err(Error::contract("spatial_attention", "empty feature bag"));
    }
    let shape = tape.shape(target).to_vec();
    let flat_len: usize = shape.iter().product();
    let flat_target = tape.reshape(target, [flat_len])?;
    let flat_members = members
        .iter()
        .map(|&m| tape.reshape(m, [flat_len]))
        .collect::<Result<Vec<_>>>()?;
    let (slices, aggregated) = slice_attention(tape, flat_target, &flat_members, score_scale)?;
    let activated = tape.relu(aggregated)?;
    let map = tape.reshape(activated, shape.clone())?;
    let mixed = tape.conv2d(map, p.gate_conv, 0)?;
    let biased = tape.add_broadcast(mixed, p.gate_bias)?;
    let gate = tape.sigmoid(biased)?;
    Ok(SpatialGate { gate, slices })
}

/// Volumetric spatial attention of a target map against its feature bag.
pub fn spatial_attention(
    tape: &mut Tape,
    tgt: &TargetFeature,
    bag: &FeatureBag,
    p: &SpatialAttnVars,
    score_scale: ScoreScale,
) -> Result<SpatialGate> {
    if bag.is_empty() {
        return Err(Error::contract("spatial_attention", "empty feature bag"));
    }
    super::check_target(tape, tgt, bag, "spatial_attention")?;
    let mut members = Vec::with_capacity(bag.len());
    let mut target = None;
    for &m in bag.members() {
        let e = spatial_embed(tape, m, p)?;
        if m == tgt.map {
            target = Some(e);
        }
        members.push(e);
    }
    let target = match target {
        Some(e) => e,
        None => spatial_embed(tape, tgt.map, p)?,
    };
    spatial_gate_from_embeddings(tape, target, &members, p, score_scale)
}
