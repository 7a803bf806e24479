//! Adam with bias-corrected first and second moments.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::models::{ModelParams, ParamGrads};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f32) -> Self {
        AdamHyper {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Optimizer state for one optimizer instance, possibly spanning several
/// networks. Moments are keyed `"<group>/<parameter>"`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit_eq(&self, other: &AdamState) -> bool {
        self.step == other.step
            && self.moments.len() == other.moments.len()
            && self
                .moments
                .iter()
                .zip(&other.moments)
                .all(|((ka, a), (kb, b))| ka == kb && a.m.bit_eq(&b.m) && a.v.bit_eq(&b.v))
    }
}

/// One network's parameters and their gradients within an update.
pub struct ParamGroup<'a> {
    pub name: &'a str,
    pub params: &'a mut ModelParams,
    pub grads: &'a ParamGrads,
}

fn state_key(group: &str, param: &str) -> String {
    format!("{group}/{param}")
}

fn check_keys(group: &ParamGroup<'_>) -> Result<()> {
    let missing: Vec<&str> = group
        .params
        .names()
        .filter(|n| !group.grads.contains_key(*n))
        .collect();
    let extra: Vec<&str> = group
        .grads
        .keys()
        .map(String::as_str)
        .filter(|n| group.params.get(n).is_err())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::GradientKeys {
            missing: missing.join(", "),
            extra: extra.join(", "),
        });
    }
    for (name, p) in group.params.iter() {
        group.grads[name].expect_shape(p.shape(), "adam_step")?;
    }
    Ok(())
}

/// Applies one Adam update to every group and advances the shared step counter.
pub fn adam_step(groups: &mut [ParamGroup<'_>], state: &mut AdamState, h: &AdamHyper) -> Result<()> {
    h.validate()?;
    for g in groups.iter() {
        check_keys(g)?;
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    let (b1, c1) = (h.beta1 as f32, (1.0 - h.beta1) as f32);
    let (b2, c2) = (h.beta2 as f32, (1.0 - h.beta2) as f32);

    for group in groups.iter_mut() {
        for (name, param) in group.params.iter_mut() {
            let grad = &group.grads[name];
            let mom = state
                .moments
                .entry(state_key(group.name, name))
                .or_insert_with(|| Moments {
                    m: Tensor::zeros(param.shape()),
                    v: Tensor::zeros(param.shape()),
                });
            let m = mom.m.data_mut();
            let v = mom.v.data_mut();
            let theta = param.data_mut();
            for i in 0..theta.len() {
                let g = grad.data()[i];
                m[i] = b1 * m[i] + c1 * g;
                v[i] = b2 * v[i] + c2 * g * g;
                let m_hat = (m[i] as f64 / bc1) as f32;
                let v_hat = (v[i] as f64 / bc2) as f32;
                theta[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
            }
        }
    }
    Ok(())
}
