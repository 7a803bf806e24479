//! The two generators and two PatchGAN discriminators.

mod discriminator;
mod generator;
mod params;

pub use discriminator::{receptive_field, stack_window, Discriminator, DiscriminatorSpec, LEAKY_SLOPE};
pub use generator::{
    default_res_blocks, Generator, GeneratorSpec, LARGE_IMAGE_RES_BLOCKS, SMALL_IMAGE_RES_BLOCKS,
};
pub use params::{BoundParams, ModelParams, ParamGrads, INIT_STD};
