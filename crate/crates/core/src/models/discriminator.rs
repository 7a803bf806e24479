//! Fully convolutional PatchGAN discriminator.
//!
//! With the default filters `[64, 128, 256, 512]` the stack is
//! `C64(s2) - C128(s2) - C256(s2) - C512(s1) - C1(s1)`, all 4x4 kernels with
//! zero padding 1; every output logit sees a 70x70 input patch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{BoundParams, ModelParams};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, ConvSpec};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub filters: Vec<usize>,
    pub kernel: usize,
    /// Instance normalization after every hidden conv except the first.
    pub instance_norm: bool,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec::with_base(64)
    }
}

impl DiscriminatorSpec {
    /// Four hidden layers with `base, 2·base, 4·base, 8·base` filters.
    pub fn with_base(base: usize) -> Self {
        DiscriminatorSpec {
            in_channels: 3,
            filters: vec![base, base * 2, base * 4, base * 8],
            kernel: 4,
            instance_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.kernel == 0 || self.filters.is_empty() || self.filters.contains(&0) {
            return Err(Error::InvalidArgument(format!("discriminator spec: invalid layout {self:?}")));
        }
        Ok(())
    }

    /// Every conv in order, output layer included. The first layer and all
    /// hidden layers but the last downsample by 2.
    pub fn layers(&self) -> Vec<ConvSpec> {
        let last = self.filters.len() - 1;
        let mut specs = Vec::with_capacity(self.filters.len() + 1);
        let mut cin = self.in_channels;
        for (i, &f) in self.filters.iter().enumerate() {
            let stride = if i == 0 || i < last { 2 } else { 1 };
            specs.push(ConvSpec::new(cin, f, self.kernel, stride, 1));
            cin = f;
        }
        specs.push(ConvSpec::new(cin, 1, self.kernel, 1, 1));
        specs
    }

    /// Side length of the logit map for an input side of `size`.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        self.layers().iter().try_fold(size, |s, l| l.output_size(s))
    }

    /// Input window `(start offset, size)` seen by one output unit along an
    /// axis: unit `i` covers `[i·jump - offset, i·jump - offset + size)`.
    pub fn receptive_window(&self) -> (usize, usize, usize) {
        stack_window(&self.layers())
    }
}

/// `(offset, size, jump)` of a conv stack, composed front to back:
/// `rf += (k - 1)·jump`, then `jump *= stride`.
pub fn stack_window(layers: &[ConvSpec]) -> (usize, usize, usize) {
    let (mut rf, mut jump, mut offset) = (1usize, 1usize, 0usize);
    for l in layers {
        rf += (l.kernel - 1) * jump;
        offset += l.padding * jump;
        jump *= l.stride;
    }
    (offset, rf, jump)
}

/// Receptive field `(height, width)` of one output logit.
pub fn receptive_field(spec: &DiscriminatorSpec) -> (usize, usize) {
    let (_, rf, _) = spec.receptive_window();
    (rf, rf)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub params: ModelParams,
}

impl Discriminator {
    pub fn build(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::new();
        let layers = spec.layers();
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            let name = layer_name(i, last);
            p.add_conv(&name, l, &mut rng)?;
            if spec.instance_norm && i > 0 && i < last {
                p.add_norm(&name, l.out_channels)?;
            }
        }
        Ok(Discriminator { spec, params: p })
    }

    /// Raw logit map, one channel.
    pub fn forward(&self, tape: &Tape, params: &BoundParams, x: &Var) -> Result<Var> {
        let [_, c, h, w] = x.shape().dims();
        if c != self.spec.in_channels {
            return Err(Error::InvalidShape {
                op: "discriminator",
                reason: format!("expected {} input channels, got {c}", self.spec.in_channels),
            });
        }
        if self.spec.output_size(h).is_none() || self.spec.output_size(w).is_none() {
            return Err(Error::InvalidShape {
                op: "discriminator",
                reason: format!("input {h}x{w} is too small to produce a logit map"),
            });
        }
        let layers = self.spec.layers();
        let last = layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in layers.iter().enumerate() {
            let name = layer_name(i, last);
            h = params.conv(tape, &name, &h, l)?;
            if i == last {
                break;
            }
            if self.spec.instance_norm && i > 0 {
                h = params.norm(tape, &name, &h)?;
            }
            h = nn::leaky_relu(tape, &h, LEAKY_SLOPE)?;
        }
        Ok(h)
    }

    pub fn run(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        Ok(self.forward(&tape, &bound, &Var::constant(x.clone()))?.into_value())
    }
}

fn layer_name(i: usize, last: usize) -> String {
    if i == last {
        "out".to_string()
    } else {
        format!("conv{}", i + 1)
    }
}
