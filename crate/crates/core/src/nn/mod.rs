//! Differentiable neural-network layers recorded on an autodiff [`Tape`](crate::autodiff::Tape).

mod activation;
mod conv;
pub(crate) mod kernels;
mod norm;
mod pad;

pub use activation::{activation, leaky_relu, relu, tanh, Activation};
pub use conv::{conv2d, conv_transpose2d, ConvSpec, ConvTransposeSpec, PadMode};
pub use norm::{instance_norm, INSTANCE_NORM_EPS};
pub use pad::reflection_pad;
