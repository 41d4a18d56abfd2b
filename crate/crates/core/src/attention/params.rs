use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_REDUCTION: usize = 16;
pub const DEFAULT_SPATIAL_KERNEL: usize = 7;
pub const DEFAULT_SPATIAL_CHANNELS: usize = 1;
pub const DEFAULT_BAG_SIZE: usize = 9;

/// Fan-based uniform init, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn fan_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape.to_vec(), -a, a, rng)
}

/// Temperature applied to slice-attention scores before the softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    /// Raw dot products.
    #[default]
    None,
    /// Divide by the square root of the embedding length.
    SqrtDim,
    /// Divide by the embedding length, i.e. mean elementwise products.
    Dim,
}

impl ScoreScale {
    /// Factor multiplied onto scores of embeddings of length `d`.
    pub fn factor(self, d: usize) -> f64 {
        match self {
            Self::None => 1.0,
            Self::SqrtDim => 1.0 / (d as f64).sqrt(),
            Self::Dim => 1.0 / d as f64,
        }
    }
}

/// Shape hyperparameters of one attention level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaConfig {
    pub channels: usize,
    pub reduction: usize,
    pub spatial_kernel: usize,
    pub spatial_channels: usize,
    #[serde(default)]
    pub score_scale: ScoreScale,
}

impl VaConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            reduction: DEFAULT_REDUCTION.min(channels.max(1)),
            spatial_kernel: DEFAULT_SPATIAL_KERNEL,
            spatial_channels: DEFAULT_SPATIAL_CHANNELS,
            score_scale: ScoreScale::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("channel count must be positive".into()));
        }
        if self.reduction == 0 || !self.channels.is_multiple_of(self.reduction) {
            return Err(Error::Config(format!(
                "reduction ratio {} does not divide {} channels",
                self.reduction, self.channels
            )));
        }
        if self.spatial_kernel.is_multiple_of(2) {
            return Err(Error::UnsupportedKernel(self.spatial_kernel));
        }
        if self.spatial_channels == 0 {
            return Err(Error::Config("spatial embedding needs at least one channel".into()));
        }
        Ok(())
    }
}

/// Weights of the volumetric channel attention branch.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttnParams {
    /// `C/r × C` squeeze.
    pub w1: Tensor,
    /// `C × C/r` excite.
    pub w2: Tensor,
    /// `C×C×1×1` conv after aggregation.
    pub gate_conv: Tensor,
    /// `C×1×1`.
    pub gate_bias: Tensor,
    pub reduction: usize,
}

impl ChannelAttnParams {
    pub fn init(channels: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        VaConfig {
            reduction,
            ..VaConfig::new(channels)
        }
        .validate()?;
        let hidden = channels / reduction;
        Ok(Self {
            w1: fan_uniform(&[hidden, channels], channels, hidden, rng),
            w2: fan_uniform(&[channels, hidden], hidden, channels, rng),
            gate_conv: fan_uniform(&[channels, channels, 1, 1], channels, channels, rng),
            gate_bias: Tensor::zeros([channels, 1, 1]),
            reduction,
        })
    }

    pub fn channels(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let r = self.reduction;
        if r == 0 || !c.is_multiple_of(r) {
            return Err(Error::Config(format!("reduction ratio {r} does not divide {c} channels")));
        }
        let h = c / r;
        let expect: [(&str, &Tensor, Vec<usize>); 4] = [
            ("w1", &self.w1, vec![h, c]),
            ("w2", &self.w2, vec![c, h]),
            ("gate_conv", &self.gate_conv, vec![c, c, 1, 1]),
            ("gate_bias", &self.gate_bias, vec![c, 1, 1]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::numeric("channel attention parameters"));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.w2, &self.gate_conv, &self.gate_bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.w2, &mut self.gate_conv, &mut self.gate_bias]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ChannelAttnVars {
        let mut put = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        ChannelAttnVars {
            w1: put(&self.w1),
            w2: put(&self.w2),
            gate_conv: put(&self.gate_conv),
            gate_bias: put(&self.gate_bias),
        }
    }
}

/// [`ChannelAttnParams`] recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelAttnVars {
    pub w1: Var,
    pub w2: Var,
    pub gate_conv: Var,
    pub gate_bias: Var,
}

impl ChannelAttnVars {
    /// Same order as [`ChannelAttnParams::tensors`].
    pub fn vars(&self) -> [Var; 4] {
        [self.w1, self.w2, self.gate_conv, self.gate_bias]
    }
}

/// Weights of the volumetric spatial attention branch.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialAttnParams {
    /// `C_s×2×k×k` embedding over the `[max, mean]` channel-pooled planes.
    pub embed_conv: Tensor,
    /// `1×C_s×1×1`.
    pub gate_conv: Tensor,
    /// `1×1×1`.
    pub gate_bias: Tensor,
}

impl SpatialAttnParams {
    pub fn init(spatial_channels: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::UnsupportedKernel(kernel));
        }
        if spatial_channels == 0 {
            return Err(Error::Config("spatial embedding needs at least one channel".into()));
        }
        let kk = kernel * kernel;
        Ok(Self {
            embed_conv: fan_uniform(&[spatial_channels, 2, kernel, kernel], 2 * kk, spatial_channels * kk, rng),
            gate_conv: fan_uniform(&[1, spatial_channels, 1, 1], spatial_channels, 1, rng),
            gate_bias: Tensor::zeros([1, 1, 1]),
        })
    }

    pub fn kernel(&self) -> usize {
        self.embed_conv.shape()[2]
    }

    pub fn spatial_channels(&self) -> usize {
        self.embed_conv.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.embed_conv.shape();
        if shape.len() != 4 || shape[1] != 2 || shape[2] != shape[3] {
            return Err(Error::Config(format!("embed_conv has shape {shape:?}, expected C_s×2×k×k")));
        }
        if shape[2].is_multiple_of(2) {
            return Err(Error::UnsupportedKernel(shape[2]));
        }
        let cs = shape[0];
        if self.gate_conv.shape() != [1, cs, 1, 1] || self.gate_bias.shape() != [1, 1, 1] {
            return Err(Error::Config(format!(
                "spatial gate shapes {:?}/{:?} do not match C_s={cs}",
                self.gate_conv.shape(),
                self.gate_bias.shape()
            )));
        }
        if self.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::numeric("spatial attention parameters"));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.embed_conv, &self.gate_conv, &self.gate_bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.embed_conv, &mut self.gate_conv, &mut self.gate_bias]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> SpatialAttnVars {
        let mut put = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        SpatialAttnVars {
            embed_conv: put(&self.embed_conv),
            gate_conv: put(&self.gate_conv),
            gate_bias: put(&self.gate_bias),
            pad: (self.kernel() - 1) / 2,
        }
    }
}

/// [`SpatialAttnParams`] recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpatialAttnVars {
    pub embed_conv: Var,
    pub gate_conv: Var,
    pub gate_bias: Var,
    pub pad: usize,
}

impl SpatialAttnVars {
    pub fn vars(&self) -> [Var; 3] {
        [self.embed_conv, self.gate_conv, self.gate_bias]
    }
}

/// Both branches of one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct VaParams {
    pub config: VaConfig,
    pub channel: ChannelAttnParams,
    pub spatial: SpatialAttnParams,
}

impl VaParams {
    pub fn init(config: VaConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            channel: ChannelAttnParams::init(config.channels, config.reduction, rng)?,
            spatial: SpatialAttnParams::init(config.spatial_channels, config.spatial_kernel, rng)?,
        })
    }

    /// All seven weight tensors: channel branch first, then spatial.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.channel.tensors().into();
        v.extend(self.spatial.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.channel.tensors_mut().into();
        v.extend(self.spatial.tensors_mut());
        v
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.channel.validate()?;
        self.spatial.validate()?;
        if self.channel.channels() != self.config.channels
            || self.channel.reduction != self.config.reduction
            || self.spatial.kernel() != self.config.spatial_kernel
            || self.spatial.spatial_channels() != self.config.spatial_channels
        {
            return Err(Error::Config("parameter shapes disagree with their config".into()));
        }
        Ok(())
    }
}
