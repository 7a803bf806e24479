use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, ConvSpec, ConvTransposeSpec};
use crate::tensor::{Shape, Tensor};

/// Standard deviation of the Normal weight initializer.
pub const INIT_STD: f32 = 0.02;

/// Gradients keyed by parameter name.
pub type ParamGrads = BTreeMap<String, Tensor>;

/// Named parameter tensors of one network, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name `{name}`")));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.bit_eq(b))
    }

    /// Puts every parameter on `tape`, as leaves when `trainable` and as
    /// constants otherwise.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable { tape.leaf(v.clone()) } else { Var::constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        BoundParams { vars }
    }

    pub fn zeros_like(&self) -> ParamGrads {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect()
    }

    pub(crate) fn add_conv<R: Rng + ?Sized>(&mut self, name: &str, spec: &ConvSpec, rng: &mut R) -> Result<()> {
        self.insert(format!("{name}.weight"), Tensor::randn(spec.weight_shape()?, INIT_STD, rng))?;
        self.insert(format!("{name}.bias"), Tensor::zeros(Shape::channels(spec.out_channels)?))
    }

    pub(crate) fn add_conv_transpose<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        spec: &ConvTransposeSpec,
        rng: &mut R,
    ) -> Result<()> {
        self.insert(format!("{name}.weight"), Tensor::randn(spec.weight_shape()?, INIT_STD, rng))?;
        self.insert(format!("{name}.bias"), Tensor::zeros(Shape::channels(spec.out_channels)?))
    }

    pub(crate) fn add_norm(&mut self, name: &str, channels: usize) -> Result<()> {
        let s = Shape::channels(channels)?;
        self.insert(format!("{name}.norm.gamma"), Tensor::ones(s))?;
        self.insert(format!("{name}.norm.beta"), Tensor::zeros(s))
    }
}

/// Parameters placed on a tape for one forward pass.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    /// Swaps the variable bound under `name`, keeping its shape.
    pub fn replace(&mut self, name: &str, var: Var) -> Result<()> {
        let slot = self
            .vars
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
        var.value().expect_shape(slot.shape(), "BoundParams::replace")?;
        *slot = var;
        Ok(())
    }

    /// Collects the gradient of every bound parameter, zero where the loss
    /// does not reach it.
    pub fn grads(&self, grads: &Gradients) -> ParamGrads {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.get_or_zeros(v)))
            .collect()
    }

    pub(crate) fn conv(&self, tape: &Tape, name: &str, x: &Var, spec: &ConvSpec) -> Result<Var> {
        let w = self.get(&format!("{name}.weight"))?;
        let b = self.get(&format!("{name}.bias"))?;
        nn::conv2d(tape, x, w, b, spec)
    }

    pub(crate) fn conv_transpose(&self, tape: &Tape, name: &str, x: &Var, spec: &ConvTransposeSpec) -> Result<Var> {
        let w = self.get(&format!("{name}.weight"))?;
        let b = self.get(&format!("{name}.bias"))?;
        nn::conv_transpose2d(tape, x, w, b, spec)
    }

    pub(crate) fn norm(&self, tape: &Tape, name: &str, x: &Var) -> Result<Var> {
        let g = self.get(&format!("{name}.norm.gamma"))?;
        let b = self.get(&format!("{name}.norm.beta"))?;
        nn::instance_norm(tape, x, g, b, nn::INSTANCE_NORM_EPS)
    }
}
