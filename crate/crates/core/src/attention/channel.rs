use super::bag::{FeatureBag, TargetFeature};
use super::params::{ChannelAttnVars, ScoreScale};
use super::slice_attention;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Output of the channel branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelGate {
    /// `C×1×1`, entries in (0, 1).
    pub gate: Var,
    /// `1×N` softmax weights over bag members.
    pub slices: Var,
}

/// `w2 · relu(w1 · avgpool(x))`, returned as a length-`C` vector.
pub fn channel_embed(tape: &mut Tape, x: Var, p: &ChannelAttnVars) -> Result<Var> {
    let pooled = tape.global_avg_pool(x)?;
    let c = tape.shape(pooled)[0];
    let col = tape.reshape(pooled, [c, 1])?;
    let squeezed = tape.matmul(p.w1, col)?;
    let hidden = tape.relu(squeezed)?;
    let excited = tape.matmul(p.w2, hidden)?;
    tape.reshape(excited, [c])
}

/// Channel gate from precomputed embeddings of the target and of every bag
/// member, in bag order.
pub fn channel_gate_from_embeddings(
    tape: &mut Tape,
    target: Var,
    members: &[Var],
    p: &ChannelAttnVars,
    score_scale: ScoreScale,
) -> Result<ChannelGate> {
    if members.is_empty() {
        return Err(Error::contract("channel_attention", "empty feature bag"));
    }
    let c = tape.shape(target)[0];
    let (slices, aggregated) = slice_attention(tape, target, members, score_scale)?;
    let activated = tape.relu(aggregated)?;
    let column = tape.reshape(activated, [c, 1, 1])?;
    let mixed = tape.conv2d(column, p.gate_conv, 0)?;
    let biased = tape.add_broadcast(mixed, p.gate_bias)?;
    let gate = tape.sigmoid(biased)?;
    Ok(ChannelGate { gate, slices })
}

/// Volumetric channel attention of a target map against its feature bag.
///
/// The same embedding weights are applied to the target and every member.
pub fn channel_attention(
    tape: &mut Tape,
    tgt: &TargetFeature,
    bag: &FeatureBag,
    p: &ChannelAttnVars,
    score_scale: ScoreScale,
) -> Result<ChannelGate> {
    if bag.is_empty() {
        return Err(Error::contract("channel_attention", "empty feature bag"));
    }
    super::check_target(tape, tgt, bag, "channel_attention")?;
    let mut members = Vec::with_capacity(bag.len());
    let mut target = None;
    for &m in bag.members() {
        let e = channel_embed(tape, m, p)?;
        if m == tgt.map {
            target = Some(e);
        }
        members.push(e);
    }
    let target = match target {
        Some(e) => e,
        None => channel_embed(tape, tgt.map, p)?,
    };
    channel_gate_from_embeddings(tape, target, &members, p, score_scale)
}
