//! Encoder / residual transformer / decoder image generator.
//!
//! Layer list, with `f = base_filters`:
//!
//! ```text
//! enc1   7x7 conv, stride 1, reflect pad 3, f filters      + IN + ReLU
//! enc2   3x3 conv, stride 2, zero pad 1, 2f filters        + IN + ReLU
//! enc3   3x3 conv, stride 2, zero pad 1, 4f filters        + IN + ReLU
//! resNN  [3x3 conv + IN + ReLU, 3x3 conv + IN] + skip       (reflect pad 1)
//! dec1   3x3 transposed conv, stride 2, 2f filters         + IN + ReLU
//! dec2   3x3 transposed conv, stride 2, f filters          + IN + ReLU
//! out    7x7 conv, stride 1, reflect pad 3, 3 filters      + tanh
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{BoundParams, ModelParams};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, ConvSpec, ConvTransposeSpec};
use crate::tensor::Tensor;

/// Residual block count used for images of at least 256 pixels.
pub const LARGE_IMAGE_RES_BLOCKS: usize = 9;
/// Residual block count used below 256 pixels.
pub const SMALL_IMAGE_RES_BLOCKS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_filters: usize,
    pub n_res_blocks: usize,
    pub image_size: usize,
}

impl GeneratorSpec {
    /// Default architecture for square images of side `image_size`.
    pub fn for_image_size(image_size: usize) -> Self {
        GeneratorSpec {
            in_channels: 3,
            out_channels: 3,
            base_filters: 64,
            n_res_blocks: default_res_blocks(image_size),
            image_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("generator spec: {msg}")));
        if self.in_channels == 0 || self.out_channels == 0 || self.base_filters == 0 {
            return bad("channel and filter counts must be positive".into());
        }
        if self.n_res_blocks == 0 {
            return bad("at least one residual block is required".into());
        }
        if self.image_size >= 256 && self.n_res_blocks != LARGE_IMAGE_RES_BLOCKS {
            return bad(format!(
                "images of 256px or more need {LARGE_IMAGE_RES_BLOCKS} residual blocks, got {}",
                self.n_res_blocks
            ));
        }
        if self.image_size < 4 || self.image_size % 4 != 0 {
            return bad(format!("image size must be a positive multiple of 4, got {}", self.image_size));
        }
        Ok(())
    }

    fn stem(&self) -> ConvSpec {
        ConvSpec::new(self.in_channels, self.base_filters, 7, 1, 3).reflect()
    }

    fn down(&self, level: usize) -> ConvSpec {
        let f = self.base_filters;
        ConvSpec::new(f << level, f << (level + 1), 3, 2, 1)
    }

    fn res_conv(&self) -> ConvSpec {
        let c = self.base_filters * 4;
        ConvSpec::new(c, c, 3, 1, 1).reflect()
    }

    fn up(&self, level: usize) -> ConvTransposeSpec {
        let f = self.base_filters;
        ConvTransposeSpec {
            in_channels: f << (level + 1),
            out_channels: f << level,
            kernel: 3,
            stride: 2,
            padding: 1,
            output_padding: 1,
        }
    }

    fn head(&self) -> ConvSpec {
        ConvSpec::new(self.base_filters, self.out_channels, 7, 1, 3).reflect()
    }
}

pub fn default_res_blocks(image_size: usize) -> usize {
    if image_size >= 256 {
        LARGE_IMAGE_RES_BLOCKS
    } else {
        SMALL_IMAGE_RES_BLOCKS
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub params: ModelParams,
}

impl Generator {
    /// Builds a generator with `Normal(0, 0.02)` weights, zero biases and
    /// unit/zero instance-norm affine parameters.
    pub fn build(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::new();
        p.add_conv("enc1", &spec.stem(), &mut rng)?;
        p.add_norm("enc1", spec.base_filters)?;
        for level in 0..2 {
            let name = format!("enc{}", level + 2);
            let s = spec.down(level);
            p.add_conv(&name, &s, &mut rng)?;
            p.add_norm(&name, s.out_channels)?;
        }
        let rs = spec.res_conv();
        for i in 0..spec.n_res_blocks {
            for j in 1..=2 {
                let name = format!("res{i:02}.conv{j}");
                p.add_conv(&name, &rs, &mut rng)?;
                p.add_norm(&name, rs.out_channels)?;
            }
        }
        for (i, level) in [1usize, 0].into_iter().enumerate() {
            let name = format!("dec{}", i + 1);
            let s = spec.up(level);
            p.add_conv_transpose(&name, &s, &mut rng)?;
            p.add_norm(&name, s.out_channels)?;
        }
        p.add_conv("out", &spec.head(), &mut rng)?;
        Ok(Generator { spec, params: p })
    }

    pub fn check_input(&self, x: &Var) -> Result<()> {
        let [_, c, h, w] = x.shape().dims();
        if c != self.spec.in_channels {
            return Err(Error::InvalidShape {
                op: "generator",
                reason: format!("expected {} input channels, got {c}", self.spec.in_channels),
            });
        }
        if h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8 {
            return Err(Error::InvalidShape {
                op: "generator",
                reason: format!("height and width must be multiples of 4 and at least 8, got {h}x{w}"),
            });
        }
        Ok(())
    }

    /// Runs the generator with parameters already bound on `tape`.
    pub fn forward(&self, tape: &Tape, params: &BoundParams, x: &Var) -> Result<Var> {
        self.check_input(x)?;
        let spec = &self.spec;
        let block = |name: &str, x: &Var, s: &ConvSpec| -> Result<Var> {
            let h = params.conv(tape, name, x, s)?;
            let h = params.norm(tape, name, &h)?;
            nn::relu(tape, &h)
        };
        let mut h = block("enc1", x, &spec.stem())?;
        h = block("enc2", &h, &spec.down(0))?;
        h = block("enc3", &h, &spec.down(1))?;
        let rs = spec.res_conv();
        for i in 0..spec.n_res_blocks {
            h = residual_block(tape, params, &format!("res{i:02}"), &h, &rs)?;
        }
        for (i, level) in [1usize, 0].into_iter().enumerate() {
            let name = format!("dec{}", i + 1);
            let u = params.conv_transpose(tape, &name, &h, &spec.up(level))?;
            let u = params.norm(tape, &name, &u)?;
            h = nn::relu(tape, &u)?;
        }
        let out = params.conv(tape, "out", &h, &spec.head())?;
        nn::tanh(tape, &out)
    }

    /// Gradient-free inference on a plain tensor.
    pub fn run(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        Ok(self.forward(&tape, &bound, &Var::constant(x.clone()))?.into_value())
    }
}

/// `x + IN(conv(ReLU(IN(conv(x)))))`, with no activation after the sum.
pub(crate) fn residual_block(tape: &Tape, params: &BoundParams, name: &str, x: &Var, spec: &ConvSpec) -> Result<Var> {
    let c1 = format!("{name}.conv1");
    let c2 = format!("{name}.conv2");
    let h = params.conv(tape, &c1, x, spec)?;
    let h = params.norm(tape, &c1, &h)?;
    let h = nn::relu(tape, &h)?;
    let h = params.conv(tape, &c2, &h, spec)?;
    let h = params.norm(tape, &c2, &h)?;
    tape.add(x, &h)
}
